"""Differentiable image distances and identity features.

Real deployments plug in learned metrics (a deep perceptual distance, a
face-recognition embedder). Everything here only assumes a callable, and
ships self-contained fallbacks built from frozen random feature stacks so
the package works, deterministically, without downloading weights.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeError
from .rng import substream

__all__ = [
    "RandomFeaturePyramid",
    "RandomIdentityEmbedder",
    "default_perceptual_metric",
    "default_identity_embedder",
    "perceptual_distance",
]


class RandomFeaturePyramid(nn.Module):
    """Multi-scale distance through a frozen random conv stack.

    Distance is the mean over levels of per-level MSE, with the raw pixel
    difference as level zero, so d(a,b)=0 iff a==b, d is symmetric, and it
    is differentiable everywhere. Weights live in buffers: never trained,
    never counted as parameters.
    """

    def __init__(self, seed: int = 101, channels=(16, 32, 64, 64)):
        super().__init__()
        g = substream(seed, "perceptual-metric")
        cin = 3
        self.depth = len(channels)
        for i, cout in enumerate(channels):
            w = torch.randn(cout, cin, 3, 3, generator=g) / math.sqrt(cin * 9)
            self.register_buffer(f"w{i}", w)
            cin = cout

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = [x]
        for i in range(self.depth):
            x = F.leaky_relu(F.conv2d(x, getattr(self, f"w{i}"), stride=2, padding=1), 0.2)
            feats.append(x)
        return feats

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"metric inputs differ: {tuple(a.shape)} vs {tuple(b.shape)}")
        fa, fb = self.features(a), self.features(b)
        terms = [F.mse_loss(x, y) for x, y in zip(fa, fb)]
        return torch.stack(terms).mean()


class RandomIdentityEmbedder(nn.Module):
    """Unit-norm embedding from a frozen random conv net.

    Stands in for a face-recognition model: deterministic, differentiable,
    and sensitive to content, which is all the identity losses and metrics
    need to be exercised end to end.
    """

    def __init__(self, seed: int = 202, dim: int = 256, input_size: int = 112):
        super().__init__()
        g = substream(seed, "identity-embedder")
        self.input_size = input_size
        chans = [3, 32, 64, 128]
        self.depth = len(chans) - 1
        for i, (ci, co) in enumerate(zip(chans[:-1], chans[1:])):
            w = torch.randn(co, ci, 3, 3, generator=g) / math.sqrt(ci * 9)
            self.register_buffer(f"w{i}", w)
        self.register_buffer("proj", torch.randn(dim, chans[-1], generator=g) / math.sqrt(chans[-1]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B,3,H,W), got {tuple(x.shape)}")
        if x.shape[-2:] != (self.input_size, self.input_size):
            x = F.interpolate(x, size=(self.input_size, self.input_size),
                              mode="bilinear", align_corners=False)
        for i in range(self.depth):
            x = F.leaky_relu(F.conv2d(x, getattr(self, f"w{i}"), stride=2, padding=1), 0.2)
        v = F.linear(F.adaptive_avg_pool2d(x, 1).flatten(1), self.proj)
        return F.normalize(v, dim=1)


_DEFAULT_METRIC: RandomFeaturePyramid | None = None
_DEFAULT_EMBEDDER: RandomIdentityEmbedder | None = None


def default_perceptual_metric() -> RandomFeaturePyramid:
    global _DEFAULT_METRIC
    if _DEFAULT_METRIC is None:
        _DEFAULT_METRIC = RandomFeaturePyramid()
    return _DEFAULT_METRIC


def default_identity_embedder() -> RandomIdentityEmbedder:
    global _DEFAULT_EMBEDDER
    if _DEFAULT_EMBEDDER is None:
        _DEFAULT_EMBEDDER = RandomIdentityEmbedder()
    return _DEFAULT_EMBEDDER


def perceptual_distance(a: torch.Tensor, b: torch.Tensor, metric=None) -> torch.Tensor:
    """Distance under the given metric (default: the frozen random pyramid)."""
    if metric is None:
        metric = default_perceptual_metric()
    return metric(a, b)
