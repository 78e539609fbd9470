"""Loss terms: closed-form values, weight table, adversarial pair."""

import math

import pytest
import torch
from torch import nn

from varigan.errors import ShapeError
from varigan.losses import (
    Discriminator,
    LossWeights,
    loss_adv,
    loss_id,
    loss_rec,
    loss_reg,
    loss_tmp,
    r1_penalty,
    random_crop,
)
from varigan.metrics import RandomFeaturePyramid

from conftest import seeded_randn


def test_weight_defaults():
    w = LossWeights()
    assert (w.latent_reg, w.l2, w.perceptual, w.identity, w.adversarial, w.temporal) \
        == (0.0, 1.0, 0.8, 0.0, 0.0, 0.0)


def test_weight_table():
    inv = LossWeights.for_task("inversion")
    assert inv.latent_reg == 1e-4 and inv.identity == 0.1
    assert inv.l2 == 1.0 and inv.perceptual == 0.8
    for kind in ("sketch", "mask"):
        w = LossWeights.for_task(kind)
        assert w.latent_reg == 0.005 and w.adversarial == 0.0
    for kind in ("superres", "video_edit", "toonify"):
        assert LossWeights.for_task(kind).adversarial == 0.1
    for kind in ("video_edit", "toonify"):
        assert LossWeights.for_task(kind).temporal == 30.0
    for kind in ("superres", "sketch", "mask", "video_edit", "toonify"):
        assert LossWeights.for_task(kind).identity == 0.0
    with pytest.raises(ValueError):
        LossWeights.for_task("nope")


def test_loss_rec_zero_on_identical():
    x = seeded_randn(2, 3, 32, 32, seed=0)
    total, terms = loss_rec(x, x.clone(), LossWeights())
    assert float(total) == 0.0
    assert float(terms["l2"]) == 0.0 and float(terms["perceptual"]) == 0.0
    assert "identity" not in terms  # weight is zero, term skipped


def test_loss_rec_total_matches_terms():
    a = seeded_randn(2, 3, 48, 48, seed=1)
    b = seeded_randn(2, 3, 48, 48, seed=2)
    w = LossWeights.for_task("inversion")
    total, terms = loss_rec(a, b, w)
    want = w.l2 * terms["l2"] + w.perceptual * terms["perceptual"] \
        + w.identity * terms["identity"]
    assert torch.allclose(total, want)
    assert float(total) > 0


def test_loss_rec_shape_mismatch():
    with pytest.raises(ShapeError):
        loss_rec(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 9, 8), LossWeights())


def test_loss_reg_closed_form():
    w_avg = seeded_randn(16, seed=3)
    w = w_avg.expand(2, 5, 16).contiguous()
    assert float(loss_reg(w, w_avg)) == 0.0
    assert float(loss_reg(w + 1.0, w_avg)) == pytest.approx(1.0)
    assert float(loss_reg(w + 2.0, w_avg)) == pytest.approx(4.0)


def test_loss_tmp_zero_and_positive():
    a = seeded_randn(2, 3, 16, 16, seed=4)
    assert float(loss_tmp(a, a.clone())) == 0.0
    assert float(loss_tmp(a, a + 0.5)) == pytest.approx(0.5)
    with pytest.raises(ShapeError):
        loss_tmp(a, a[:, :, :8])


def test_loss_id_zero_on_identical():
    x = seeded_randn(2, 3, 64, 64, seed=5)
    assert float(loss_id(x, x.clone())) == pytest.approx(0.0, abs=1e-6)
    y = seeded_randn(2, 3, 64, 64, seed=6)
    assert float(loss_id(x, y)) > 0


def test_loss_rec_custom_metric_routes_through():
    metric = RandomFeaturePyramid(seed=9)
    a = seeded_randn(1, 3, 32, 32, seed=7)
    b = seeded_randn(1, 3, 32, 32, seed=8)
    _, terms = loss_rec(a, b, LossWeights(), metric=metric)
    assert torch.allclose(terms["perceptual"], metric(a, b))


class _ConstantCritic(nn.Module):
    def __init__(self, value=0.0, input_size=16):
        super().__init__()
        self.input_size = input_size
        self.value = value

    def forward(self, x):
        return torch.full((x.shape[0],), self.value) + 0.0 * x.sum(dim=(1, 2, 3))


def test_loss_adv_constant_critic_closed_form():
    critic = _ConstantCritic(0.0)
    y = seeded_randn(2, 3, 32, 32, seed=10)
    y_hat = seeded_randn(2, 3, 32, 32, seed=11).requires_grad_(True)
    g_loss, d_loss = loss_adv(critic, y_hat, y)
    assert float(g_loss.detach()) == pytest.approx(math.log(2.0), rel=1e-6)
    assert float(d_loss.detach()) == pytest.approx(2 * math.log(2.0), rel=1e-6)


def test_loss_adv_keeps_generator_graph():
    disc = Discriminator(input_size=16)
    y = seeded_randn(2, 3, 16, 16, seed=12)
    y_hat = seeded_randn(2, 3, 16, 16, seed=13).requires_grad_(True)
    g_loss, d_loss = loss_adv(disc, y_hat, y)
    g_loss.backward()
    assert y_hat.grad is not None and y_hat.grad.abs().sum() > 0
    d_loss.backward()  # fake branch detached, so this must not touch y_hat


def test_r1_zero_for_flat_critic():
    critic = _ConstantCritic(1.3)
    y = seeded_randn(2, 3, 24, 24, seed=14)
    assert float(r1_penalty(critic, y)) == pytest.approx(0.0, abs=1e-8)


def test_r1_positive_for_real_critic():
    disc = Discriminator(input_size=16)
    y = seeded_randn(2, 3, 16, 16, seed=15)
    assert float(r1_penalty(disc, y).detach()) > 0


def test_random_crop_window_shared_and_seeded():
    x = seeded_randn(2, 3, 40, 40, seed=16)
    g1 = torch.Generator().manual_seed(0)
    g2 = torch.Generator().manual_seed(0)
    a = random_crop(x, 16, g1)
    b = random_crop(x, 16, g2)
    assert torch.equal(a, b)
    assert a.shape == (2, 3, 16, 16)
    with pytest.raises(ShapeError):
        random_crop(x, 64)


def test_discriminator_shapes():
    disc = Discriminator(input_size=32)
    out = disc(seeded_randn(3, 3, 32, 32, seed=17))
    assert out.shape == (3,)
    with pytest.raises(ShapeError):
        disc(torch.zeros(1, 3, 16, 16))
    with pytest.raises(ShapeError):
        Discriminator(input_size=48)


def test_minibatch_stddev_flags_constant_batches():
    disc = Discriminator(input_size=16)
    x = torch.zeros(4, 3, 16, 16)
    # identical batch entries leave (almost) nothing for the stddev channel
    y = disc.stddev(torch.ones(4, 7, 4, 4))
    assert y[:, -1].abs().max() < 1e-3
    assert disc(x).shape == (4,)
    # and the gradient through the channel stays finite there
    inp = torch.ones(4, 7, 4, 4, requires_grad=True)
    disc.stddev(inp)[:, -1].sum().backward()
    assert torch.isfinite(inp.grad).all()
