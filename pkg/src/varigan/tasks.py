"""Task harnesses: paired-data synthesis, augmentation, training loops,
and the video identity metrics.

Each task trains encoder-side modules against a frozen generator:

  inversion    f, w from (x, aligned x); reconstruction + latent pull
  superres     input bilinearly upsampled back to encoder size, depth 7
               (single factor) or 3 (multiple factors); adversarial
  sketch/mask  translation net in front of the encoder; structure rows
               from the translated input, texture rows from the aligned
               target; depth 1 (sketch) or 3 (mask)
  video_edit   styles from the aligned crop plus an editing vector,
               depth 13; adversarial + flicker
  toonify      same encoding, decoded by the transferred generator G';
               adversarial + flicker

The generator (and G') stay frozen; a checksum guards against drift.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import parameter_checksum
from .encoder import Encoder, EncoderSpec, FusionStack, TranslationNet, compose_style
from .errors import GeneratorDriftError, ShapeError, SpecError
from .losses import (Discriminator, LossWeights, loss_adv, loss_rec,
                     loss_reg, loss_tmp, r1_penalty)
from .metrics import default_identity_embedder
from .rng import substream, substream_seed
from .synthesis import Generator, GeneratorSpec, NoiseField, refactor

__all__ = [
    "TASK_KINDS",
    "TaskSpec",
    "PairedSample",
    "TrainResult",
    "synthesize_pairs",
    "derive_transferred_generator",
    "sketch_transform",
    "mask_transform",
    "augment_geometric",
    "upsample_input",
    "train_task",
    "metric_id_consistency",
    "metric_id_maintenance",
    "write_manifest",
    "read_manifest",
    "load_pairs_from_manifest",
]

TASK_KINDS = ("inversion", "superres", "sketch", "mask", "video_edit", "toonify")
DEFAULT_DEPTHS = {"inversion": 0, "sketch": 1, "mask": 3, "video_edit": 13, "toonify": 13}


@dataclass(eq=True)
class TaskSpec:
    kind: str
    depth: int
    weights: LossWeights
    sr_factors: tuple[int, ...] = ()
    style_split: int = 7

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise SpecError(f"unknown task kind {self.kind!r}")
        if self.kind == "superres" and not self.sr_factors:
            raise SpecError("superres task needs at least one rescaling factor")
        for f in self.sr_factors:
            if not 1 <= f <= 64:
                raise SpecError(f"rescaling factor {f} outside [1, 64]")

    @classmethod
    def default(cls, kind: str, sr_factors: tuple[int, ...] = (8,)) -> "TaskSpec":
        weights = LossWeights.for_task(kind)
        if kind == "superres":
            depth = 7 if len(sr_factors) == 1 else 3
            return cls(kind, depth, weights, tuple(sr_factors))
        return cls(kind, DEFAULT_DEPTHS[kind], weights)

    @property
    def uses_translator(self) -> bool:
        return self.kind in ("sketch", "mask")

    @property
    def uses_discriminator(self) -> bool:
        return self.weights.adversarial > 0

    @property
    def uses_temporal(self) -> bool:
        return self.weights.temporal > 0


@dataclass
class PairedSample:
    """One training pair; aligned crops default to the images themselves."""

    source: torch.Tensor
    target: torch.Tensor
    vector: torch.Tensor | None = None
    scale: float | None = None
    source_aligned: torch.Tensor | None = None
    target_aligned: torch.Tensor | None = None

    def __post_init__(self):
        if self.source_aligned is None:
            self.source_aligned = self.source
        if self.target_aligned is None:
            self.target_aligned = self.target


def _resize(x: torch.Tensor, size: int) -> torch.Tensor:
    if x.shape[-2:] == (size, size):
        return x
    return F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)


def synthesize_pairs(g0: Generator, edit_or_generator, n: int, seed: int,
                     scale_range: tuple[float, float] = (0.0, 2.0),
                     image_size: int | None = None,
                     batch: int = 8) -> list[PairedSample]:
    """Deterministic (x, y[, v]) pairs from a frozen generator.

    The second argument selects the mode: None copies x (inversion-style
    pairs), an editing vector makes y the edited face with a random scale
    drawn per sample from `scale_range`, and a second generator of the
    same architecture makes y its output for the same latent.
    """
    mode = "identity"
    v = g_prime = None
    if isinstance(edit_or_generator, Generator):
        g_prime = edit_or_generator
        if g_prime.spec != g0.spec:
            raise SpecError("paired generators must share an architecture")
        mode = "transfer"
    elif edit_or_generator is not None:
        v = torch.as_tensor(edit_or_generator, dtype=torch.float32)
        if v.ndim == 1:
            v = v.unsqueeze(0).expand(g0.num_style_layers, -1)
        if v.shape != (g0.num_style_layers, g0.spec.latent_dim):
            raise ShapeError(f"editing vector {tuple(v.shape)} does not fit the generator")
        mode = "editing"

    zs = torch.randn(n, g0.spec.latent_dim, generator=substream(seed, "pair-latents"))
    scales = None
    if mode == "editing":
        lo, hi = scale_range
        u = torch.rand(n, generator=substream(seed, "pair-scales"))
        scales = lo + (hi - lo) * u
    noise = NoiseField.fixed(seed)
    pairs: list[PairedSample] = []
    with torch.no_grad():
        for start in range(0, n, batch):
            z = zs[start:start + batch]
            w = g0.map_latent(z)
            x = g0.synthesize(w, noise=noise)
            if mode == "identity":
                y = x
            elif mode == "transfer":
                y = g_prime.synthesize(w, noise=noise)
            else:
                s = scales[start:start + batch]
                y = g0.synthesize(w + s.view(-1, 1, 1) * v, noise=noise)
            if image_size is not None:
                x, y = _resize(x, image_size), _resize(y, image_size)
            for i in range(x.shape[0]):
                vec = sc = None
                if mode == "editing":
                    sc = float(scales[start + i])
                    vec = (sc * v).clone()
                pairs.append(PairedSample(x[i].clone(), y[i].clone(), vec, sc))
    return pairs


_LAPLACIAN = torch.tensor([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def sketch_transform(y: torch.Tensor, threshold: float = 0.15) -> torch.Tensor:
    """Synthetic sketch: dark strokes where luminance curvature is high."""
    single = y.ndim == 3
    if single:
        y = y.unsqueeze(0)
    gray = y.mean(dim=1, keepdim=True)
    edges = F.conv2d(gray, _LAPLACIAN.view(1, 1, 3, 3), padding=1).abs()
    out = torch.where(edges > threshold, -torch.ones_like(edges), torch.ones_like(edges))
    out = out.expand(-1, 3, -1, -1).contiguous()
    return out[0] if single else out


def mask_transform(y: torch.Tensor, levels: int = 4) -> torch.Tensor:
    """Synthetic label raster: channelwise posterization to flat regions."""
    single = y.ndim == 3
    if single:
        y = y.unsqueeze(0)
    q = torch.round((y.clamp(-1, 1) + 1) / 2 * (levels - 1)) / (levels - 1) * 2 - 1
    # light blur merges speckle into contiguous regions
    k = torch.full((3, 1, 3, 3), 1 / 9.0)
    q = F.conv2d(F.pad(q, (1, 1, 1, 1), mode="replicate"), k, groups=3)
    q = torch.round((q + 1) / 2 * (levels - 1)) / (levels - 1) * 2 - 1
    return q[0] if single else q


def augment_geometric(images, seed: int, neutral: bool = False,
                      scale_range=(0.8, 1.2), max_translate: float = 0.1,
                      max_rotate: float = 15.0):
    """Shared random similarity warp for a tensor or a tuple of tensors.

    Every tensor gets the same transform, so paired sources, targets and
    rasters stay registered. Sizes are preserved (zero fill outside).
    """
    single = torch.is_tensor(images)
    batch = (images,) if single else tuple(images)
    if neutral:
        out = tuple(t.clone() for t in batch)
        return out[0] if single else out
    g = substream(seed, "augment")
    u = torch.rand(4, generator=g)
    s = scale_range[0] + (scale_range[1] - scale_range[0]) * float(u[0])
    angle = math.radians((2 * float(u[1]) - 1) * max_rotate)
    tdx = (2 * float(u[2]) - 1) * max_translate
    tdy = (2 * float(u[3]) - 1) * max_translate
    cos, sin = math.cos(angle), math.sin(angle)
    out = []
    for t in batch:
        squeeze = t.ndim == 3
        x = t.unsqueeze(0) if squeeze else t
        b, _, h, w = x.shape
        theta = torch.tensor([[cos / s, -sin / s * h / w, tdx],
                              [sin / s * w / h, cos / s, tdy]], dtype=x.dtype)
        grid = F.affine_grid(theta.unsqueeze(0).expand(b, -1, -1), x.shape,
                             align_corners=False)
        y = F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros",
                          align_corners=False)
        out.append(y[0] if squeeze else y)
    return out[0] if single else tuple(out)


def upsample_input(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Bilinear upsample by an integer rescaling factor in [1, 64]."""
    if not 1 <= factor <= 64:
        raise ValueError(f"factor {factor} outside [1, 64]")
    if factor == 1:
        return x
    single = x.ndim == 3
    if single:
        x = x.unsqueeze(0)
    y = F.interpolate(x, scale_factor=factor, mode="bilinear", align_corners=False)
    return y[0] if single else y


def _downsample(x: torch.Tensor, factor: int) -> torch.Tensor:
    return F.avg_pool2d(x, factor)


def derive_transferred_generator(g: Generator, seed: int,
                                 strength: float = 0.2) -> Generator:
    """A stand-in G': same architecture and mapping, synthesis weights
    perturbed. Real transfers fine-tune on another domain; this keeps the
    latent space shared, which is all the pairing logic relies on."""
    g2 = Generator(g.spec, seed=0)
    g2.load_state_dict(g.state_dict())
    gen = substream(seed, "domain-transfer")
    with torch.no_grad():
        for name, p in g2.named_parameters():
            if name.startswith("mapping."):
                continue
            if name.endswith("noise_scale") or "affine" in name:
                continue
            scale = p.detach().std()
            if scale > 0:
                p.add_(strength * scale * torch.randn(p.shape, generator=gen))
    return g2


@dataclass
class TrainResult:
    encoder: Encoder
    fusion: FusionStack | None
    translator: TranslationNet | None
    discriminator: Discriminator | None
    history: list[dict] = field(default_factory=list)

    @property
    def totals(self) -> list[float]:
        return [h["total"] for h in self.history]


def _stack(pairs: list[PairedSample], idx, attr: str) -> torch.Tensor:
    return torch.stack([getattr(pairs[i], attr) for i in idx])


def train_task(task: TaskSpec, generator: Generator, data: list[PairedSample], *,
               steps: int = 50, batch_size: int = 2, seed: int = 0, lr: float = 1e-4,
               encoder_spec: EncoderSpec | None = None,
               generator_prime: Generator | None = None,
               metric=None, embedder=None, r1_gamma: float = 1.0,
               augment: bool = False, log_path=None) -> TrainResult:
    """Train the encoder-side modules for one task against a frozen generator.

    `data` comes from synthesize_pairs or a manifest; the generator (and
    G' for toonify) is checksummed before and after, and any drift raises.
    """
    if not data:
        raise ValueError("no training pairs")
    if task.kind == "toonify" and generator_prime is None:
        raise SpecError("toonify training needs the transferred generator")
    gspec: GeneratorSpec = generator.spec
    m = gspec.upscale_factor
    sh, th = data[0].source.shape[-2:], data[0].target.shape[-2:]
    if (sh[0] * m, sh[1] * m) != (th[0] * 8, th[1] * 8):
        raise SpecError(
            f"pair geometry {tuple(sh)} -> {tuple(th)} does not fit this "
            f"generator: an encoder input of height H synthesizes at H*{m}/8")
    espec = encoder_spec or EncoderSpec.desk(gspec)
    gex = refactor(generator)
    gex_out = refactor(generator_prime) if task.kind == "toonify" else gex

    frozen = [generator] + ([generator_prime] if generator_prime is not None else [])
    checksums = [parameter_checksum(m) for m in frozen]
    flags = [[p.requires_grad for p in m.parameters()] for m in frozen]
    for m in frozen:
        m.requires_grad_(False)

    encoder = Encoder(espec)
    encoder.set_latent_offset(generator.w_avg)
    fusion = FusionStack(gspec, espec) if task.depth > 0 else None
    translator = TranslationNet() if task.uses_translator else None
    modules = [encoder] + [m for m in (fusion, translator) if m is not None]
    params = [p for m in modules for p in m.parameters()]
    opt = torch.optim.Adam(params, lr=lr)

    disc = d_opt = None
    if task.uses_discriminator:
        crop = min(64, min(data[0].target.shape[-2:]))
        if crop & (crop - 1):
            crop = 1 << (crop.bit_length() - 1)
        disc = Discriminator(input_size=crop)
        d_opt = torch.optim.Adam(disc.parameters(), lr=lr)

    batch_rng = substream(seed, "batches")
    crop_rng = substream(seed, "adv-crops")
    factor_rng = substream(seed, "sr-factors")
    noise = NoiseField.random(substream_seed(seed, "train-noise"))
    history: list[dict] = []

    try:
        for step in range(steps):
            idx = torch.randint(0, len(data), (batch_size,), generator=batch_rng).tolist()
            x = _stack(data, idx, "source")
            y = _stack(data, idx, "target")
            xa = _stack(data, idx, "source_aligned")
            ya = _stack(data, idx, "target_aligned")
            if augment:
                x, y, xa, ya = augment_geometric((x, y, xa, ya), seed * 100003 + step)

            record = {"step": step}
            reg_w = None
            y_hat2 = None

            if task.kind == "inversion":
                f, _, w = encoder(x, xa, 0)
                y_hat = gex(f, w)
                reg_w = w
            elif task.kind == "superres":
                fi = int(torch.randint(0, len(task.sr_factors), (1,), generator=factor_rng))
                factor = task.sr_factors[fi]
                x_lo = _downsample(y, factor)
                x_up = upsample_input(x_lo, factor)
                f, skips, w = encoder(x_up, x_up, task.depth)
                y_hat = gex(f, w, skips=skips, fusion=fusion)
            elif task.uses_translator:
                xt = translator(x)
                f, skips = encoder.encode_feature(xt, task.depth)
                w_structure = encoder.encode_style(xt)
                w_texture = encoder.encode_style(ya)
                w = compose_style(w_structure, w_texture, task.style_split)
                y_hat = gex(f, w, skips=skips, fusion=fusion)
                reg_w = w
            elif task.kind == "video_edit":
                f, skips = encoder.encode_feature(x, task.depth)
                w = encoder.encode_style(xa)
                if data[idx[0]].vector is not None:
                    v = _stack(data, idx, "vector")
                    w = w + v
                y_hat = gex(f, w, noise=noise, skips=skips, fusion=fusion)
                if task.uses_temporal:
                    y_hat2 = gex(f, w, noise=noise, skips=skips, fusion=fusion)
            else:  # toonify
                f, skips, w = encoder(x, xa, task.depth)
                y_hat = gex_out(f, w, noise=noise, skips=skips, fusion=fusion)
                if task.uses_temporal:
                    y_hat2 = gex_out(f, w, noise=noise, skips=skips, fusion=fusion)

            total, terms = loss_rec(y_hat, y, task.weights, metric, embedder)
            for k, t in terms.items():
                record[k] = float(t.detach())
            if task.weights.latent_reg > 0 and reg_w is not None:
                reg = loss_reg(reg_w, generator.w_avg)
                total = total + task.weights.latent_reg * reg
                record["reg"] = float(reg.detach())
            if task.uses_temporal and y_hat2 is not None:
                tmp = loss_tmp(y_hat, y_hat2)
                total = total + task.weights.temporal * tmp
                record["tmp"] = float(tmp.detach())
            d_total = None
            if disc is not None:
                g_loss, d_loss = loss_adv(disc, y_hat, y, gen=crop_rng)
                total = total + task.weights.adversarial * g_loss
                d_total = d_loss + (r1_gamma / 2) * r1_penalty(disc, y, gen=crop_rng)
                record["adv_g"] = float(g_loss.detach())
                record["adv_d"] = float(d_loss.detach())

            opt.zero_grad(set_to_none=True)
            total.backward()
            opt.step()
            if d_total is not None:
                d_opt.zero_grad(set_to_none=True)
                d_total.backward()
                d_opt.step()
            record["total"] = float(total.detach())
            history.append(record)
    finally:
        for m, fl in zip(frozen, flags):
            for p, f_ in zip(m.parameters(), fl):
                p.requires_grad_(f_)

    for m, before in zip(frozen, checksums):
        if parameter_checksum(m) != before:
            raise GeneratorDriftError("frozen generator parameters changed during training")

    if log_path is not None:
        _append_csv(log_path, history)
    return TrainResult(encoder, fusion, translator, disc, history)


def _append_csv(path, rows: list[dict]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = sorted({k for r in rows for k in r}, key=lambda k: (k != "step", k))
    new = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, restval="")
        if new:
            writer.writeheader()
        writer.writerows(rows)


def _frame_embedding(frame: torch.Tensor, embedder) -> torch.Tensor:
    with torch.no_grad():
        e = embedder(frame.unsqueeze(0))[0].double()
    return e / e.norm()


def _id_gap(ea: torch.Tensor, eb: torch.Tensor) -> float:
    return float(1.0 - (ea * eb).sum())


def metric_id_consistency(edited: torch.Tensor, original: torch.Tensor,
                          embedder=None) -> float:
    """Mean identity gap between each edited frame and its original.

    Unlike loss_id this is an evaluation metric, so the cosine runs in
    float64 on renormalized embeddings; the value is stable to ~1e-12.
    """
    if edited.shape != original.shape:
        raise ShapeError(f"clips differ: {tuple(edited.shape)} vs {tuple(original.shape)}")
    if edited.shape[0] == 0:
        return 0.0
    embedder = embedder or default_identity_embedder()
    gaps = [_id_gap(_frame_embedding(edited[i], embedder),
                    _frame_embedding(original[i], embedder))
            for i in range(edited.shape[0])]
    return sum(gaps) / len(gaps)


def metric_id_maintenance(edited: torch.Tensor, embedder=None) -> float:
    """Mean identity gap of frames 2..N against the first frame; 0 for
    single-frame clips."""
    n = edited.shape[0]
    if n <= 1:
        return 0.0
    embedder = embedder or default_identity_embedder()
    first = _frame_embedding(edited[0], embedder)
    gaps = [_id_gap(_frame_embedding(edited[i], embedder), first)
            for i in range(1, n)]
    return sum(gaps) / len(gaps)


def write_manifest(path, records: list[dict]) -> Path:
    """Newline-delimited JSON records: source, target, optional vector/crop."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for r in records:
            unknown = set(r) - {"source", "target", "vector", "crop"}
            if unknown:
                raise ValueError(f"unknown manifest fields: {sorted(unknown)}")
            if "source" not in r or "target" not in r:
                raise ValueError("manifest records need source and target")
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            out.append(json.loads(line))
    return out


def load_pairs_from_manifest(path, image_root=None) -> list[PairedSample]:
    """Materialize manifest records into tensors."""
    from .imageio import load_image
    root = Path(image_root) if image_root else Path(path).parent
    pairs = []
    for r in read_manifest(path):
        src = load_image(root / r["source"])
        tgt = load_image(root / r["target"])
        vec = None
        if r.get("vector"):
            vec = torch.from_numpy(np.load(root / r["vector"])).float()
        pairs.append(PairedSample(src, tgt, vec))
    return pairs
