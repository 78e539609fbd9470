"""Two-step inversion into style rows plus first-layer features, and the
latent/feature edits that ride on it.

Step I is a single encoder pass. Step II polishes that estimate with Adam
on a perceptual distance only, at a smaller learning rate for the feature
map than for the styles, keeping the best iterate seen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from .checkpoint import load_archive, save_archive
from .encoder import Encoder
from .errors import ShapeError, SpecError
from .metrics import perceptual_distance
from .synthesis import GeneratorEX, NoiseField

__all__ = [
    "InversionResult",
    "invert_step1",
    "invert_step2",
    "edit_latent",
    "domain_transfer",
    "shift_feature",
    "rotate_feature",
]


@dataclass
class InversionResult:
    """Latent state of one inversion: styles, features, loss history."""

    w: torch.Tensor  # (B, L, D)
    f: torch.Tensor  # (B, C, h, w)
    step1_loss: float | None = None
    trace: list[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def final_loss(self) -> float | None:
        return self.trace[-1] if self.trace else self.step1_loss

    def detached(self) -> "InversionResult":
        return InversionResult(self.w.detach().clone(), self.f.detach().clone(),
                               self.step1_loss, list(self.trace), self.iterations)

    def save(self, path) -> Path:
        meta = {
            "kind": "inversion",
            "step1_loss": self.step1_loss,
            "trace": self.trace,
            "iterations": self.iterations,
        }
        return save_archive(path, {"w": self.w.detach(), "f": self.f.detach()}, meta)

    @classmethod
    def load(cls, path) -> "InversionResult":
        tensors, meta = load_archive(path)
        if meta.get("kind") != "inversion":
            raise SpecError(f"{path}: not an inversion archive")
        return cls(tensors["w"], tensors["f"], meta.get("step1_loss"),
                   list(meta.get("trace", [])), int(meta.get("iterations", 0)))


def _match_size(y: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """Average-pool a synthesized image down to a target's grid if needed."""
    if y.shape[-2:] == like.shape[-2:]:
        return y
    return F.adaptive_avg_pool2d(y, like.shape[-2:])


def invert_step1(encoder: Encoder, gex: GeneratorEX, x: torch.Tensor,
                 style_input: torch.Tensor | None = None, metric=None,
                 noise: NoiseField | None = None) -> InversionResult:
    """Encoder-only inversion. `style_input` defaults to x itself (use the
    aligned crop when inverting an unaligned frame)."""
    if x.ndim != 4:
        raise ShapeError(f"expected batched (B,3,H,W), got {tuple(x.shape)}")
    x2 = style_input if style_input is not None else x
    with torch.no_grad():
        f, _, w = encoder(x, x2, 0)
        y = gex(f, w, noise=noise)
        loss = perceptual_distance(_match_size(y, x), x, metric)
    return InversionResult(w, f, step1_loss=float(loss))


def invert_step2(gex: GeneratorEX, x: torch.Tensor, init: InversionResult,
                 iterations: int = 500, lr_w: float = 0.01, lr_f: float = 0.001,
                 metric=None, noise: NoiseField | None = None) -> InversionResult:
    """Adam refinement of (w, f) under the perceptual distance alone.

    The loss is evaluated before each update, so trace[0] is the loss of
    the init; the returned latents are the best iterate, not the last.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    w = init.w.detach().clone().requires_grad_(True)
    f = init.f.detach().clone().requires_grad_(True)
    opt = torch.optim.Adam([{"params": [w], "lr": lr_w},
                            {"params": [f], "lr": lr_f}])
    trace = []
    best_loss, best_w, best_f = float("inf"), init.w.detach().clone(), init.f.detach().clone()
    for _ in range(iterations):
        opt.zero_grad(set_to_none=True)
        y = gex(f, w, noise=noise)
        loss = perceptual_distance(_match_size(y, x), x, metric)
        trace.append(float(loss.detach()))
        if trace[-1] < best_loss:
            best_loss, best_w, best_f = trace[-1], w.detach().clone(), f.detach().clone()
        loss.backward()
        opt.step()
    return InversionResult(best_w, best_f, step1_loss=init.step1_loss,
                           trace=trace, iterations=iterations)


def edit_latent(w: torch.Tensor, direction: torch.Tensor, scale: float,
                rows: slice | list[int] | None = None) -> torch.Tensor:
    """w + scale * direction, on all style rows or a subset.

    direction may be (D,), (L,D) or match w exactly; scale 0 returns an
    identical copy.
    """
    if w.ndim != 3:
        raise ShapeError(f"style code must be (B,L,D), got {tuple(w.shape)}")
    d = direction
    if d.ndim == 1:
        d = d.view(1, 1, -1)
    elif d.ndim == 2:
        d = d.unsqueeze(0)
    if d.ndim != 3 or d.shape[-1] != w.shape[-1]:
        raise ShapeError(f"direction {tuple(direction.shape)} does not fit "
                         f"style code {tuple(w.shape)}")
    d = d.expand(w.shape[0], w.shape[1] if d.shape[1] == 1 else d.shape[1], -1)
    if d.shape != w.shape:
        raise ShapeError(f"direction rows {d.shape[1]} vs style rows {w.shape[1]}")
    out = w.clone()
    if rows is None:
        out = out + scale * d
    else:
        out[:, rows] = out[:, rows] + scale * d[:, rows]
    return out


def domain_transfer(gex_target: GeneratorEX, result: InversionResult,
                    noise: NoiseField | None = None, skips=None, fusion=None) -> torch.Tensor:
    """Replay inverted latents through a generator from another domain."""
    spec = gex_target.spec
    if result.f.shape[1] != spec.channels(4):
        raise SpecError(
            f"feature channels {result.f.shape[1]} do not fit target generator "
            f"({spec.channels(4)})")
    if result.w.shape[1] != spec.num_style_layers:
        raise SpecError(
            f"style rows {result.w.shape[1]} do not fit target generator "
            f"({spec.num_style_layers})")
    return gex_target(result.f, result.w, noise=noise, skips=skips, fusion=fusion)


def shift_feature(f: torch.Tensor, dy: float, dx: float) -> torch.Tensor:
    """Translate a feature map, zero-filling the uncovered region.

    Integer shifts are exact; fractional ones sample bilinearly.
    """
    if f.ndim != 4:
        raise ShapeError(f"expected (B,C,H,W), got {tuple(f.shape)}")
    if float(dy).is_integer() and float(dx).is_integer():
        dy, dx = int(dy), int(dx)
        out = torch.zeros_like(f)
        h, w = f.shape[-2:]
        if abs(dy) >= h or abs(dx) >= w:
            return out
        out[..., max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)] = \
            f[..., max(-dy, 0):h + min(-dy, 0), max(-dx, 0):w + min(-dx, 0)]
        return out
    b, _, h, w = f.shape
    ys = (torch.arange(h, dtype=f.dtype) + 0.5 - dy) * 2 / h - 1
    xs = (torch.arange(w, dtype=f.dtype) + 0.5 - dx) * 2 / w - 1
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    grid = torch.stack([gx, gy], dim=-1).unsqueeze(0).expand(b, -1, -1, -1)
    return F.grid_sample(f, grid, mode="bilinear", padding_mode="zeros",
                         align_corners=False)


def rotate_feature(f: torch.Tensor, degrees: float) -> torch.Tensor:
    """Rotate a feature map about its center, zero-filling outside."""
    if f.ndim != 4:
        raise ShapeError(f"expected (B,C,H,W), got {tuple(f.shape)}")
    if degrees % 360 == 0:
        return f.clone()
    b, _, h, w = f.shape
    a = math.radians(degrees)
    cos, sin = math.cos(a), math.sin(a)
    # grid_sample theta maps output normalized coords to input ones
    theta = torch.tensor([[cos, -sin * h / w, 0.0],
                          [sin * w / h, cos, 0.0]], dtype=f.dtype)
    grid = F.affine_grid(theta.unsqueeze(0).expand(b, -1, -1), f.shape,
                         align_corners=False)
    return F.grid_sample(f, grid, mode="bilinear", padding_mode="zeros",
                         align_corners=False)
