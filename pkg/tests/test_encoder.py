"""Encoder geometry: feature/style heads, skip taps, fusion, translation."""

import pytest
import torch

from varigan.encoder import (
    ALLOWED_DEPTHS,
    TAP_STAGES,
    Encoder,
    EncoderSpec,
    FusionStack,
    SkipSet,
    TranslationNet,
    active_slots,
    compose_style,
    encoder_forward,
    fuse_skip,
)
from varigan.errors import ShapeError
from varigan.synthesis import GeneratorSpec

from conftest import seeded_randn


@pytest.fixture(scope="module")
def gspec():
    return GeneratorSpec.desk(256)


@pytest.fixture(scope="module")
def espec(gspec):
    return EncoderSpec.desk(gspec)


@pytest.fixture(scope="module")
def encoder(espec):
    torch.manual_seed(0)
    return Encoder(espec)


def test_allowed_depths():
    assert ALLOWED_DEPTHS == (0, 1, 3, 5, 7, 9, 11, 13)


@pytest.mark.parametrize("depth,n", [(0, 0), (1, 1), (3, 2), (5, 3), (7, 4),
                                     (9, 5), (11, 6), (13, 7)])
def test_active_slot_count(depth, n):
    slots = active_slots(depth)
    assert len(slots) == n
    assert list(slots) == list(range(n))


def test_tap_stage_table():
    assert TAP_STAGES == (21, 21, 16, 11, 7, 3, 0)


@pytest.mark.parametrize("hw", [(256, 256), (128, 160), (96, 96)])
def test_feature_head_is_one_eighth(encoder, gspec, hw):
    x = seeded_randn(2, 3, *hw, seed=hw[0])
    f, skips = encoder.encode_feature(x, depth=0)
    assert f.shape == (2, gspec.channels(4), hw[0] // 8, hw[1] // 8)
    assert skips.depth == 0 and skips.get(0) is None


def test_structure_input_rejected(encoder):
    with pytest.raises(ShapeError):
        encoder.encode_feature(seeded_randn(1, 3, 100, 96, seed=0))  # not /8
    with pytest.raises(ShapeError):
        encoder.encode_feature(seeded_randn(1, 3, 24, 24, seed=0))  # too small
    with pytest.raises(ShapeError):
        encoder.encode_feature(seeded_randn(1, 1, 64, 64, seed=0))  # channels


def test_style_output_rows(encoder, gspec):
    w = encoder.encode_style(seeded_randn(2, 3, 64, 64, seed=1))
    assert w.shape == (2, gspec.num_style_layers, gspec.latent_dim)
    with pytest.raises(ShapeError):
        encoder.encode_style(seeded_randn(1, 3, 48, 48, seed=1))  # below minimum


def test_latent_offset_is_additive(encoder):
    x = seeded_randn(1, 3, 64, 64, seed=2)
    encoder.set_latent_offset(torch.zeros(512))
    base = encoder.encode_style(x)
    off = seeded_randn(512, seed=3)
    encoder.set_latent_offset(off)
    shifted = encoder.encode_style(x)
    encoder.set_latent_offset(torch.zeros(512))
    assert torch.allclose(shifted - base, off.expand_as(base), atol=1e-6)


def test_skipset_taps_cover_active_slots(encoder):
    x = seeded_randn(1, 3, 128, 128, seed=4)
    for depth in (1, 7, 13):
        _, skips = encoder.encode_feature(x, depth)
        have = [s for s in range(7) if skips.get(s) is not None]
        assert have == list(active_slots(depth))


def test_tap_shapes_match_trunk(encoder, gspec, espec):
    """Each tap must be spatially compatible with its fusion slot."""
    x = seeded_randn(1, 3, 128, 128, seed=5)
    _, skips = encoder.encode_feature(x, 13)
    base = 128 // 8
    for slot in range(7):
        tap = skips.get(slot)
        res = 4 << slot
        scale = max(1, res // 32)
        assert tap.shape[-2:] == (base * scale, base * scale), f"slot {slot}"
        assert tap.shape[1] == espec.tap_channels(slot)


def test_fusion_residual_identity_at_zero(gspec, espec):
    torch.manual_seed(1)
    fusion = FusionStack(gspec, espec)
    for m in fusion.blocks:
        torch.nn.init.zeros_(m[-1].weight)
        torch.nn.init.zeros_(m[-1].bias)
    x = seeded_randn(1, gspec.channels(4), 16, 16, seed=6)
    tap = seeded_randn(1, espec.tap_channels(0), 16, 16, seed=7)
    assert torch.equal(fusion(0, x, tap), x)
    assert torch.equal(fuse_skip(fusion, 0, x, tap), x)


def test_fusion_rejects_mismatches(gspec, espec):
    torch.manual_seed(2)
    fusion = FusionStack(gspec, espec)
    x = seeded_randn(1, gspec.channels(4), 16, 16, seed=8)
    tap = seeded_randn(1, espec.tap_channels(0), 8, 8, seed=9)
    with pytest.raises(ShapeError):
        fusion(0, x, tap)
    with pytest.raises(ValueError):
        fusion(99, x, x)


def test_encoder_forward_full_path(encoder, desk_gex, gspec, espec):
    torch.manual_seed(3)
    fusion = FusionStack(gspec, espec)
    x = seeded_randn(1, 3, 96, 96, seed=10)
    with torch.no_grad():
        y0 = encoder_forward(encoder, desk_gex, x, x, depth=0)
        y13 = encoder_forward(encoder, desk_gex, x, x, depth=13, fusion=fusion)
    m = gspec.upscale_factor
    assert y0.shape == (1, 3, 96 * m // 8, 96 * m // 8)
    assert y13.shape == y0.shape
    assert not torch.equal(y0, y13)  # the skips changed the trunk


def test_skipset_validates_slots():
    with pytest.raises(ValueError):
        SkipSet(2, {})  # not an allowed depth
    s = SkipSet(3, {0: torch.zeros(1, 4, 8, 8), 1: torch.zeros(1, 4, 8, 8)})
    assert s.get(5) is None


def test_translation_net_shape_and_range():
    torch.manual_seed(4)
    t = TranslationNet()
    x = seeded_randn(2, 3, 64, 96, seed=11)
    y = t(x)
    assert y.shape == x.shape
    assert y.min() >= -1.0 and y.max() <= 1.0
    with pytest.raises(ShapeError):
        t(seeded_randn(1, 3, 30, 64, seed=12))


def test_translation_net_is_small():
    n = sum(p.numel() for p in TranslationNet().parameters())
    assert n < 20_000


def test_compose_style_split():
    a = seeded_randn(2, 14, 512, seed=13)
    b = seeded_randn(2, 14, 512, seed=14)
    w = compose_style(a, b, 7)
    assert torch.equal(w[:, :7], a[:, :7])
    assert torch.equal(w[:, 7:], b[:, 7:])


def test_spec_for_other_resolutions():
    for res in (64, 128, 512):
        gs = GeneratorSpec.desk(res)
        es = EncoderSpec.desk(gs)
        torch.manual_seed(5)
        enc = Encoder(es)
        w = enc.encode_style(seeded_randn(1, 3, 64, 64, seed=res))
        assert w.shape == (1, gs.num_style_layers, gs.latent_dim)
