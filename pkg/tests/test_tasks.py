"""Task specs, pair synthesis, data transforms, and the training harness."""

import pytest
import torch

from varigan.checkpoint import parameter_checksum
from varigan.encoder import EncoderSpec
from varigan.errors import SpecError
from varigan.losses import LossWeights
from varigan.synthesis import Generator, GeneratorSpec
from varigan.tasks import (
    DEFAULT_DEPTHS,
    PairedSample,
    TaskSpec,
    augment_geometric,
    derive_transferred_generator,
    load_pairs_from_manifest,
    mask_transform,
    metric_id_consistency,
    metric_id_maintenance,
    read_manifest,
    sketch_transform,
    synthesize_pairs,
    train_task,
    upsample_input,
    write_manifest,
)

from conftest import seeded_randn


@pytest.fixture(scope="module")
def small_gen():
    g = Generator(GeneratorSpec.desk(256), seed=31)
    g.update_mean_latent(n=64, seed=31)
    return g


def test_default_depth_table():
    assert DEFAULT_DEPTHS == {"inversion": 0, "sketch": 1, "mask": 3,
                              "video_edit": 13, "toonify": 13}
    assert TaskSpec.default("superres", (8,)).depth == 7
    assert TaskSpec.default("superres", (2, 4, 8)).depth == 3


def test_task_spec_validation():
    with pytest.raises(SpecError):
        TaskSpec("nope", 0, LossWeights())
    with pytest.raises(SpecError):
        TaskSpec("superres", 7, LossWeights(), sr_factors=())
    with pytest.raises(SpecError):
        TaskSpec("superres", 7, LossWeights(), sr_factors=(128,))
    assert TaskSpec.default("sketch").uses_translator
    assert not TaskSpec.default("inversion").uses_discriminator
    assert TaskSpec.default("video_edit").uses_temporal


def test_synthesize_pairs_deterministic(small_gen):
    a = synthesize_pairs(small_gen, None, 4, seed=5, image_size=64)
    b = synthesize_pairs(small_gen, None, 4, seed=5, image_size=64)
    for p, q in zip(a, b):
        assert torch.equal(p.source, q.source)
        assert torch.equal(p.target, q.target)
    c = synthesize_pairs(small_gen, None, 4, seed=6, image_size=64)
    assert not torch.equal(a[0].source, c[0].source)


def test_synthesize_pairs_identity_mode(small_gen):
    pairs = synthesize_pairs(small_gen, None, 3, seed=7, image_size=64)
    for p in pairs:
        assert torch.equal(p.source, p.target)
        assert p.vector is None and p.scale is None
        assert p.source.shape == (3, 64, 64)


def test_synthesize_pairs_edit_mode(small_gen):
    v = seeded_randn(512, seed=8)
    pairs = synthesize_pairs(small_gen, v, 6, seed=9, image_size=64,
                             scale_range=(0.0, 2.0))
    scales = [p.scale for p in pairs]
    assert all(0.0 <= s <= 2.0 for s in scales)
    assert len(set(scales)) > 1  # random per sample
    changed = [not torch.equal(p.source, p.target) for p in pairs if p.scale > 0.1]
    assert all(changed)
    for p in pairs:
        assert p.vector is not None


def test_synthesize_pairs_transfer_mode(small_gen):
    gp = derive_transferred_generator(small_gen, seed=10)
    pairs = synthesize_pairs(small_gen, gp, 2, seed=11, image_size=64)
    for p in pairs:
        assert not torch.equal(p.source, p.target)
    with pytest.raises(SpecError):
        synthesize_pairs(small_gen, Generator(GeneratorSpec.desk(64), seed=0), 2, seed=0)


def test_derive_transferred_generator_properties(small_gen):
    gp = derive_transferred_generator(small_gen, seed=12)
    assert gp.spec == small_gen.spec
    assert parameter_checksum(gp) != parameter_checksum(small_gen)
    # style pathway untouched: same mapping, same affines
    assert torch.equal(gp.mapping.layers[0].weight, small_gen.mapping.layers[0].weight)
    assert torch.equal(gp.conv1.affine.weight, small_gen.conv1.affine.weight)
    assert not torch.equal(gp.conv1.weight, small_gen.conv1.weight)
    gp2 = derive_transferred_generator(small_gen, seed=12)
    assert parameter_checksum(gp2) == parameter_checksum(gp)


def test_sketch_and_mask_transforms():
    x = seeded_randn(3, 64, 64, seed=13).clamp(-1, 1)
    s = sketch_transform(x)
    assert s.shape == x.shape
    assert set(s.unique().tolist()) <= {-1.0, 1.0}
    m = mask_transform(x)
    assert m.shape == x.shape
    assert len(m.unique()) <= 16
    assert torch.equal(sketch_transform(x), s)  # deterministic


def test_augment_geometric_shared_warp():
    x = seeded_randn(2, 3, 64, 64, seed=14)
    a, b = augment_geometric((x, x.clone()), seed=15)
    assert torch.equal(a, b)
    assert not torch.equal(a, x)
    (n,) = augment_geometric((x,), seed=16, neutral=True)
    assert torch.equal(n, x) and n is not x


def test_upsample_input_bounds():
    x = seeded_randn(1, 3, 16, 16, seed=17)
    assert upsample_input(x, 4).shape == (1, 3, 64, 64)
    assert upsample_input(x, 1) is x
    with pytest.raises(ValueError):
        upsample_input(x, 0)
    with pytest.raises(ValueError):
        upsample_input(x, 65)


def test_train_task_freezes_generator(small_gen):
    pairs = synthesize_pairs(small_gen, None, 6, seed=18, image_size=64)
    before = parameter_checksum(small_gen)
    grads_before = [p.requires_grad for p in small_gen.parameters()]
    result = train_task(TaskSpec.default("inversion"), small_gen, pairs,
                        steps=3, batch_size=2, seed=18)
    assert parameter_checksum(small_gen) == before
    assert [p.requires_grad for p in small_gen.parameters()] == grads_before
    assert len(result.history) == 3
    assert all("l2" in h and "total" in h for h in result.history)
    assert result.fusion is None and result.translator is None


def test_train_task_toonify_needs_prime(small_gen):
    pairs = synthesize_pairs(small_gen, None, 2, seed=19, image_size=64)
    with pytest.raises(SpecError):
        train_task(TaskSpec.default("toonify"), small_gen, pairs, steps=1)
    with pytest.raises(ValueError):
        train_task(TaskSpec.default("inversion"), small_gen, [], steps=1)


def test_train_task_video_edit_modules(small_gen):
    v = seeded_randn(512, seed=20) * 0.1
    pairs = synthesize_pairs(small_gen, v, 6, seed=21, image_size=64)
    result = train_task(TaskSpec.default("video_edit"), small_gen, pairs,
                        steps=2, batch_size=2, seed=21)
    assert result.fusion is not None
    assert result.discriminator is not None
    h = result.history[0]
    assert "tmp" in h and "adv_g" in h and "adv_d" in h


def test_train_task_writes_log(tmp_path, small_gen):
    pairs = synthesize_pairs(small_gen, None, 4, seed=22, image_size=64)
    log = tmp_path / "history.csv"
    train_task(TaskSpec.default("inversion"), small_gen, pairs,
               steps=2, batch_size=2, seed=22, log_path=log)
    lines = log.read_text().strip().splitlines()
    assert len(lines) == 3  # header + 2 steps
    assert lines[0].startswith("step,")


def test_metric_oracles_match_loops():
    clip = seeded_randn(10, 3, 64, 64, seed=23)
    orig = seeded_randn(10, 3, 64, 64, seed=24)
    from varigan.metrics import default_identity_embedder
    emb = default_identity_embedder()

    def unit(frame):
        with torch.no_grad():
            e = emb(frame[None])[0].double()
        return e / e.norm()

    want_c = sum(float(1 - unit(clip[i]) @ unit(orig[i])) for i in range(10)) / 10
    assert metric_id_consistency(clip, orig) == pytest.approx(want_c, abs=1e-10)
    want_m = sum(float(1 - unit(clip[i]) @ unit(clip[0])) for i in range(1, 10)) / 9
    assert metric_id_maintenance(clip) == pytest.approx(want_m, abs=1e-10)
    assert metric_id_maintenance(clip[:1]) == 0.0
    # the float32 training loss agrees at its own precision
    from varigan.losses import loss_id
    f32 = sum(float(loss_id(clip[i:i + 1], orig[i:i + 1])) for i in range(10)) / 10
    assert metric_id_consistency(clip, orig) == pytest.approx(f32, abs=1e-6)


def test_manifest_round_trip(tmp_path):
    recs = [{"source": "a.png", "target": "b.png"},
            {"source": "c.png", "target": "d.png", "vector": "v.npy"}]
    path = write_manifest(tmp_path / "pairs.jsonl", recs)
    assert read_manifest(path) == recs
    with pytest.raises(ValueError):
        write_manifest(tmp_path / "bad.jsonl", [{"source": "x", "target": "y",
                                                 "extra": 1}])
    with pytest.raises(ValueError):
        write_manifest(tmp_path / "bad2.jsonl", [{"source": "x"}])


def test_load_pairs_from_manifest(tmp_path):
    import numpy as np
    from varigan.imageio import save_image
    x = seeded_randn(3, 32, 32, seed=25).clamp(-1, 1)
    y = seeded_randn(3, 32, 32, seed=26).clamp(-1, 1)
    save_image(tmp_path / "x.png", x)
    save_image(tmp_path / "y.png", y)
    np.save(tmp_path / "v.npy", np.ones(512, dtype=np.float32))
    write_manifest(tmp_path / "pairs.jsonl",
                   [{"source": "x.png", "target": "y.png", "vector": "v.npy"}])
    pairs = load_pairs_from_manifest(tmp_path / "pairs.jsonl")
    assert len(pairs) == 1
    assert pairs[0].source.shape == (3, 32, 32)
    assert (pairs[0].source - x).abs().max() < 1 / 127.0  # 8-bit round trip
    assert torch.equal(pairs[0].vector, torch.ones(512))
