"""Face alignment from five landmarks, and plain rectangle crops.

The alignment quad is built the standard way for face datasets: from the
eye centers and mouth corners, take the eye-to-eye and eye-to-mouth
vectors, orient the horizontal axis by their combination, scale by
max(2*|eye_to_eye|, 1.8*|eye_to_mouth|), and center at the eye average
nudged 10% toward the mouth. The output crop samples that quad into a
square, so detectors trained on aligned data see faces where they expect
them.

Landmark detection is pluggable: anything mapping an image (3,H,W) in
[-1,1] to five (x,y) points, ordered left eye, right eye, nose, left
mouth corner, right mouth corner. `MarkerDetector` finds saturated color
markers and exists so the full path runs and is testable without a
learned detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import DetectionError, ShapeError

__all__ = [
    "MarkerDetector",
    "AlignInfo",
    "align_transform",
    "align_crop",
    "manual_crop",
    "MARKER_COLORS",
]

# landmark order: left eye, right eye, nose, mouth left, mouth right
MARKER_COLORS = torch.tensor([
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, 1.0, -1.0],
    [1.0, -1.0, 1.0],
])


class MarkerDetector:
    """Finds five saturated color markers; raises DetectionError otherwise."""

    def __init__(self, tolerance: float = 0.25):
        self.tolerance = tolerance

    def __call__(self, image: torch.Tensor) -> torch.Tensor:
        if image.ndim != 3 or image.shape[0] != 3:
            raise ShapeError(f"expected (3,H,W), got {tuple(image.shape)}")
        h, w = image.shape[-2:]
        ys = torch.arange(h, dtype=torch.float32).view(-1, 1) + 0.5
        xs = torch.arange(w, dtype=torch.float32).view(1, -1) + 0.5
        points = []
        for i, color in enumerate(MARKER_COLORS):
            dist = (image - color.view(3, 1, 1)).abs().amax(dim=0)
            mask = (dist < self.tolerance).float()
            total = mask.sum()
            if total < 1:
                raise DetectionError(f"marker {i} not found")
            points.append(torch.stack([(mask * xs).sum() / total,
                                       (mask * ys).sum() / total]))
        return torch.stack(points)


@dataclass
class AlignInfo:
    """Similarity crop record. `matrix` maps output pixel coords to input."""

    matrix: torch.Tensor  # (2,3)
    output_size: int
    landmarks: torch.Tensor  # the five input-space points used

    def to_input(self, pts: torch.Tensor) -> torch.Tensor:
        """Output-space (x,y) points into input space."""
        ones = torch.ones(pts.shape[0], 1, dtype=pts.dtype)
        return torch.cat([pts, ones], dim=1) @ self.matrix.T

    def to_output(self, pts: torch.Tensor) -> torch.Tensor:
        a = self.matrix[:, :2]
        b = self.matrix[:, 2]
        return (pts - b) @ torch.linalg.inv(a).T

    @property
    def rotation_degrees(self) -> float:
        return math.degrees(math.atan2(self.matrix[1, 0].item(), self.matrix[0, 0].item()))

    @property
    def scale(self) -> float:
        return math.sqrt(abs(torch.linalg.det(self.matrix[:, :2]).item()))


def _rot90(v: torch.Tensor) -> torch.Tensor:
    return torch.stack([-v[1], v[0]])


def align_transform(landmarks: torch.Tensor, output_size: int = 256) -> torch.Tensor:
    """(2,3) matrix taking output pixel coords onto the face quad."""
    if landmarks.shape != (5, 2):
        raise ShapeError(f"expected five (x,y) landmarks, got {tuple(landmarks.shape)}")
    lm = landmarks.to(torch.float64)
    eye_left, eye_right, _, mouth_left, mouth_right = lm
    eye_avg = (eye_left + eye_right) / 2
    eye_to_eye = eye_right - eye_left
    mouth_avg = (mouth_left + mouth_right) / 2
    eye_to_mouth = mouth_avg - eye_avg
    x = eye_to_eye - _rot90(eye_to_mouth)
    n = x.norm()
    if n < 1e-6:
        raise DetectionError("degenerate landmark layout")
    x = x / n
    x = x * max(eye_to_eye.norm().item() * 2.0, eye_to_mouth.norm().item() * 1.8)
    y = _rot90(x)
    c = eye_avg + eye_to_mouth * 0.1
    # output (u,v) in [0,S] maps to c + (2u/S-1)x + (2v/S-1)y
    s = float(output_size)
    a = torch.stack([2 * x / s, 2 * y / s], dim=1)  # columns act on (u,v)
    t = c - x - y
    return torch.cat([a, t.view(2, 1)], dim=1).to(torch.float32)


def _sample_affine(image: torch.Tensor, matrix: torch.Tensor,
                   out_hw: tuple[int, int]) -> torch.Tensor:
    h, w = image.shape[-2:]
    oh, ow = out_hw
    us = torch.arange(ow, dtype=torch.float32) + 0.5
    vs = torch.arange(oh, dtype=torch.float32) + 0.5
    vv, uu = torch.meshgrid(vs, us, indexing="ij")
    pts = torch.stack([uu, vv, torch.ones_like(uu)], dim=-1)  # (oh,ow,3)
    src = pts @ matrix.T  # (oh,ow,2) in input pixel coords
    gx = 2 * src[..., 0] / w - 1
    gy = 2 * src[..., 1] / h - 1
    grid = torch.stack([gx, gy], dim=-1).unsqueeze(0)
    return F.grid_sample(image.unsqueeze(0), grid, mode="bilinear",
                         padding_mode="zeros", align_corners=False)[0]


def align_crop(image: torch.Tensor, detector=None, landmarks: torch.Tensor | None = None,
               output_size: int = 256) -> tuple[torch.Tensor, AlignInfo]:
    """Similarity-crop a face to a square using detected or given landmarks."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected (3,H,W), got {tuple(image.shape)}")
    if landmarks is None:
        if detector is None:
            detector = MarkerDetector()
        landmarks = detector(image)
    matrix = align_transform(landmarks, output_size)
    crop = _sample_affine(image, matrix, (output_size, output_size))
    return crop, AlignInfo(matrix, output_size, landmarks.clone())


def manual_crop(image: torch.Tensor, box: tuple[int, int, int, int],
                output_size: int = 256) -> tuple[torch.Tensor, AlignInfo]:
    """Axis-aligned crop `box` = (top, left, height, width), resized square."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected (3,H,W), got {tuple(image.shape)}")
    top, left, bh, bw = box
    if bh <= 0 or bw <= 0:
        raise ValueError(f"empty crop box {box}")
    s = float(output_size)
    matrix = torch.tensor([[bw / s, 0.0, float(left)],
                           [0.0, bh / s, float(top)]], dtype=torch.float32)
    crop = _sample_affine(image, matrix, (output_size, output_size))
    lm = torch.zeros(5, 2)
    return crop, AlignInfo(matrix, output_size, lm)
