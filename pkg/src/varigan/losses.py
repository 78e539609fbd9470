"""Training losses and the crop-based discriminator.

Reconstruction is lambda2*L2 + lambda3*perceptual + lambda4*identity with
mean (not sum) conventions throughout, so the default weights work at any
resolution. Adversarial terms are the non-saturating softplus pair with an
R1 gradient penalty; since outputs vary in size, the discriminator runs on
fixed-size random crops. The flicker penalty is the mean absolute gap
between two synthesis passes that differ only in their noise draw.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeError
from .metrics import default_identity_embedder, perceptual_distance

__all__ = [
    "LossWeights",
    "loss_rec",
    "loss_reg",
    "loss_adv",
    "r1_penalty",
    "loss_tmp",
    "loss_id",
    "Discriminator",
    "random_crop",
]


@dataclass(eq=True)
class LossWeights:
    """lambda1..lambda6. Defaults are all-zero except the reconstruction
    pair; use `for_task` for the standard per-task settings."""

    latent_reg: float = 0.0     # lambda1
    l2: float = 1.0             # lambda2
    perceptual: float = 0.8     # lambda3
    identity: float = 0.0       # lambda4
    adversarial: float = 0.0    # lambda5
    temporal: float = 0.0       # lambda6

    @classmethod
    def for_task(cls, kind: str) -> "LossWeights":
        table = {
            "inversion": cls(latent_reg=1e-4, identity=0.1),
            "superres": cls(adversarial=0.1),
            "sketch": cls(latent_reg=0.005),
            "mask": cls(latent_reg=0.005),
            "video_edit": cls(adversarial=0.1, temporal=30.0),
            "toonify": cls(adversarial=0.1, temporal=30.0),
        }
        if kind not in table:
            raise ValueError(f"unknown task kind {kind!r}")
        return table[kind]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**d)


def loss_rec(y_hat: torch.Tensor, y: torch.Tensor, weights: LossWeights,
             metric=None, embedder=None) -> tuple[torch.Tensor, dict]:
    """Weighted reconstruction loss and its per-term breakdown.

    The identity term is only computed when its weight is nonzero, so no
    embedder is ever needed for tasks that do not use it.
    """
    if y_hat.shape != y.shape:
        raise ShapeError(f"shape mismatch: {tuple(y_hat.shape)} vs {tuple(y.shape)}")
    terms = {}
    terms["l2"] = F.mse_loss(y_hat, y)
    terms["perceptual"] = perceptual_distance(y_hat, y, metric)
    total = weights.l2 * terms["l2"] + weights.perceptual * terms["perceptual"]
    if weights.identity > 0:
        terms["identity"] = loss_id(y_hat, y, embedder)
        total = total + weights.identity * terms["identity"]
    return total, terms


def loss_reg(w: torch.Tensor, w_avg: torch.Tensor) -> torch.Tensor:
    """Mean squared deviation of style rows from the average latent."""
    if w.ndim != 3 or w.shape[-1] != w_avg.shape[-1]:
        raise ShapeError(f"style code {tuple(w.shape)} vs w_avg {tuple(w_avg.shape)}")
    return (w - w_avg).pow(2).mean()


def random_crop(x: torch.Tensor, size: int, gen: torch.Generator | None = None) -> torch.Tensor:
    """One random size x size crop, same window for the whole batch."""
    h, w = x.shape[-2:]
    if h < size or w < size:
        raise ShapeError(f"image {h}x{w} smaller than crop {size}")
    if h == size and w == size:
        return x
    ty = int(torch.randint(0, h - size + 1, (1,), generator=gen))
    tx = int(torch.randint(0, w - size + 1, (1,), generator=gen))
    return x[..., ty:ty + size, tx:tx + size]


def loss_adv(discriminator: "Discriminator", y_hat: torch.Tensor, y: torch.Tensor,
             gen: torch.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Non-saturating generator and discriminator losses on shared crops.

    The generator term keeps the graph into y_hat; the discriminator term
    sees the fake detached.
    """
    size = discriminator.input_size
    fake = random_crop(y_hat, size, gen)
    real = random_crop(y, size, gen)
    d_fake = discriminator(fake)
    g_loss = F.softplus(-d_fake).mean()
    d_loss = F.softplus(discriminator(fake.detach())).mean() + \
        F.softplus(-discriminator(real)).mean()
    return g_loss, d_loss


def r1_penalty(discriminator: "Discriminator", y: torch.Tensor,
               gen: torch.Generator | None = None) -> torch.Tensor:
    """R1 gradient penalty on real images (unscaled; caller applies gamma/2)."""
    real = random_crop(y, discriminator.input_size, gen).detach().requires_grad_(True)
    out = discriminator(real)
    (grad,) = torch.autograd.grad(out.sum(), real, create_graph=True)
    return grad.pow(2).sum(dim=(1, 2, 3)).mean()


def loss_tmp(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Flicker suppression: mean absolute gap between two noise draws."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def loss_id(y_hat: torch.Tensor, y: torch.Tensor, embedder=None) -> torch.Tensor:
    """1 - cosine similarity of identity embeddings, batch mean.

    Computed as half the squared distance of the unit embeddings: the same
    quantity, but exactly zero when the inputs coincide.
    """
    if embedder is None:
        embedder = default_identity_embedder()
    ea = F.normalize(embedder(y_hat), dim=1)
    eb = F.normalize(embedder(y), dim=1)
    return 0.5 * (ea - eb).pow(2).sum(dim=1).mean()


class MinibatchStddev(nn.Module):
    # var + eps before the sqrt keeps the gradient finite when a batch
    # happens to contain identical samples
    def forward(self, x):
        s = (x.var(dim=0, unbiased=False) + 1e-8).sqrt().mean()
        return torch.cat([x, s.expand(x.shape[0], 1, *x.shape[2:])], dim=1)


class DBlock(nn.Module):
    """Residual downsampling block (avg-pool flavor)."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cin, 3, 1, 1)
        self.conv2 = nn.Conv2d(cin, cout, 3, 1, 1)
        self.skip = nn.Conv2d(cin, cout, 1, bias=False)

    def forward(self, x):
        y = F.leaky_relu(self.conv1(x), 0.2)
        y = F.avg_pool2d(F.leaky_relu(self.conv2(y), 0.2), 2)
        return (y + F.avg_pool2d(self.skip(x), 2)) / 2 ** 0.5


class Discriminator(nn.Module):
    """Fixed-size patch critic for crop-based adversarial training."""

    def __init__(self, input_size: int = 64, base_channels: int = 32, max_channels: int = 128):
        super().__init__()
        if input_size < 8 or input_size & (input_size - 1):
            raise ShapeError(f"input_size must be a power of two >= 8, got {input_size}")
        self.input_size = input_size
        chans = []
        c = base_channels
        res = input_size
        while res > 4:
            chans.append(min(c, max_channels))
            c *= 2
            res //= 2
        chans.append(min(c, max_channels))
        self.from_rgb = nn.Conv2d(3, chans[0], 3, 1, 1)
        self.blocks = nn.ModuleList(
            DBlock(ci, co) for ci, co in zip(chans[:-1], chans[1:]))
        self.stddev = MinibatchStddev()
        self.final_conv = nn.Conv2d(chans[-1] + 1, chans[-1], 3, 1, 1)
        self.final_fc = nn.Linear(chans[-1] * 16, chans[-1])
        self.out = nn.Linear(chans[-1], 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != (self.input_size, self.input_size):
            raise ShapeError(
                f"discriminator expects {self.input_size}px crops, got {tuple(x.shape[-2:])}")
        y = F.leaky_relu(self.from_rgb(x), 0.2)
        for b in self.blocks:
            y = b(y)
        y = F.leaky_relu(self.final_conv(self.stddev(y)), 0.2)
        y = F.leaky_relu(self.final_fc(y.flatten(1)), 0.2)
        return self.out(y).squeeze(1)
