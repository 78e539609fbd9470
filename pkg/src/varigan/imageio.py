"""Image and frame-sequence IO.

Images travel as float tensors (3,H,W) in [-1,1]. Videos are directories
of numbered PNG frames; no codec dependency.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ShapeError

__all__ = [
    "load_image",
    "save_image",
    "load_frames",
    "save_frames",
    "pad_to_grid",
    "unpad_output",
]


def load_image(path) -> torch.Tensor:
    img = Image.open(path).convert("RGB")
    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def save_image(path, x: torch.Tensor) -> Path:
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise ShapeError("save_image takes one image; use save_frames for batches")
        x = x[0]
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeError(f"expected (3,H,W), got {tuple(x.shape)}")
    arr = ((x.detach().clamp(-1, 1) + 1) * 127.5).round().byte()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.permute(1, 2, 0).numpy()).save(path)
    return path


def load_frames(directory) -> torch.Tensor:
    d = Path(directory)
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not files:
        raise FileNotFoundError(f"no frames in {d}")
    frames = [load_image(p) for p in files]
    if any(f.shape != frames[0].shape for f in frames):
        raise ShapeError(f"{d}: frames disagree on size")
    return torch.stack(frames)


def save_frames(directory, frames: torch.Tensor, prefix: str = "frame") -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    return [save_image(d / f"{prefix}_{i:05d}.png", fr) for i, fr in enumerate(frames)]


def pad_to_grid(x: torch.Tensor, multiple: int = 8,
                mode: str = "reflect") -> tuple[torch.Tensor, tuple[int, int]]:
    """Pad bottom/right so spatial sides divide `multiple`; returns pads."""
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (0, 0)
    squeeze = x.ndim == 3
    if squeeze:
        x = x.unsqueeze(0)
    x = F.pad(x, (0, pw, 0, ph), mode=mode)
    return (x[0] if squeeze else x), (ph, pw)


def unpad_output(y: torch.Tensor, pads: tuple[int, int], scale: int = 1) -> torch.Tensor:
    """Crop away a padded region, scaled to the output grid."""
    ph, pw = pads[0] * scale, pads[1] * scale
    if ph:
        y = y[..., :-ph, :]
    if pw:
        y = y[..., :, :-pw]
    return y
