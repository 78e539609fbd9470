"""StyleGAN2-family synthesis with a resampling-free shallow trunk.

The baseline generator is the usual skip-architecture synthesis network:
a learned 4x4 constant, modulated 3x3 convolutions with equalized learning
rate, per-layer noise, and an RGB skip branch. Upsampling is written as
nearest-neighbor x2 followed by a depthwise binomial smoothing, which is
numerically identical to the usual zero-insert + [1,3,3,1] resampler (the
[1,3,3,1] tap factors into [1,1] * [1,2,1]).

`refactor` rewrites the first seven layers so they run at a single working
resolution: the x2 resamplers below 32x32 are dropped and every conv (and
smoothing) in that range becomes a dilated version, dilation 8 at the first
layer down to 1 at the seventh. Because a dilated conv on a nearest-neighbor
upsampled signal equals the upsampled result of the native conv (including
zero-padded borders), the rewritten network reproduces the baseline exactly
when fed the 8x nearest-upsampled constant. No parameters change; the first
layer simply becomes an input, so it can take features of any spatial size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeError, SpecError
from .rng import SeedSequence, substream

__all__ = [
    "GeneratorSpec",
    "NoiseField",
    "Generator",
    "GeneratorEX",
    "modulated_conv2d",
    "binomial_smooth",
    "refactor",
    "upsample_constant",
    "synthesize",
    "synthesize_baseline",
    "map_z_to_w",
    "style_mixing",
    "receptive_radius",
    "EqualLinear",
    "SynthesisLayer",
    "ToRgb",
    "MappingNetwork",
]

# Channel counts per resolution. "full" mirrors the reference 1024px model,
# "desk" is a slim profile for CPU-budget runs; ratios beyond 32px match.
FULL_CHANNELS = {4: 512, 8: 512, 16: 512, 32: 512, 64: 512, 128: 256, 256: 128, 512: 64, 1024: 32}
DESK_CHANNELS = {4: 96, 8: 96, 16: 96, 32: 96, 64: 48, 128: 24, 256: 12, 512: 8, 1024: 4}

BASE_RESOLUTION = 32  # native resolution of the 7th layer; trunk runs here
SHALLOW_DILATIONS = (8, 4, 4, 2, 2, 1, 1)


@dataclass(eq=True)
class GeneratorSpec:
    """Architecture hyperparameters for one generator."""

    output_resolution: int = 1024
    latent_dim: int = 512
    channel_schedule: Mapping[int, int] = field(default_factory=lambda: dict(FULL_CHANNELS))

    def __post_init__(self):
        r = self.output_resolution
        if r < 32 or r & (r - 1):
            raise SpecError(f"output_resolution must be a power of two >= 32, got {r}")
        if self.latent_dim <= 0:
            raise SpecError(f"latent_dim must be positive, got {self.latent_dim}")
        res = 4
        while res <= r:
            if res not in self.channel_schedule:
                raise SpecError(f"channel_schedule missing resolution {res}")
            res *= 2

    @property
    def base_resolution(self) -> int:
        return BASE_RESOLUTION

    @property
    def upscale_factor(self) -> int:
        """Spatial ratio between the output and the 7th-layer features."""
        return self.output_resolution // BASE_RESOLUTION

    @property
    def num_style_layers(self) -> int:
        return 2 * int(math.log2(self.output_resolution)) - 2

    @property
    def num_levels(self) -> int:
        """Number of up-conv/conv levels after the first layer."""
        return int(math.log2(self.output_resolution)) - 2

    def channels(self, res: int) -> int:
        return self.channel_schedule[res]

    @classmethod
    def desk(cls, output_resolution: int = 256, latent_dim: int = 512) -> "GeneratorSpec":
        sched = {k: v for k, v in DESK_CHANNELS.items() if k <= output_resolution}
        return cls(output_resolution, latent_dim, sched)

    def to_dict(self) -> dict:
        return {
            "output_resolution": self.output_resolution,
            "latent_dim": self.latent_dim,
            "channel_schedule": {str(k): v for k, v in self.channel_schedule.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(
            int(d["output_resolution"]),
            int(d["latent_dim"]),
            {int(k): int(v) for k, v in d["channel_schedule"].items()},
        )


class NoiseField:
    """Per-layer noise maps in one of three modes.

    zero    no noise at all
    fixed   maps drawn once per (layer, shape) from a seed and cached, so
            repeated synthesis is bit-identical; supports integer shifts
    random  fresh maps every call, reproducible from the seed
    """

    _MARGIN = 64  # fixed-mode canvases carry this much slack for shifts

    def __init__(self, mode: str, seed: int = 0, _cache=None, _offset=(0, 0)):
        if mode not in ("zero", "fixed", "random"):
            raise ValueError(f"unknown noise mode {mode!r}")
        self.mode = mode
        self.seed = seed
        self._cache = _cache if _cache is not None else {}
        self._offset = _offset
        self._seq = SeedSequence(seed, "cpu") if mode == "random" else None

    @classmethod
    def zero(cls) -> "NoiseField":
        return cls("zero")

    @classmethod
    def fixed(cls, seed: int) -> "NoiseField":
        return cls("fixed", seed)

    @classmethod
    def random(cls, seed: int) -> "NoiseField":
        return cls("random", seed)

    def shifted(self, dy: int, dx: int) -> "NoiseField":
        """Same field, translated like a feature shifted by (dy, dx).

        Offsets are in working-resolution units and get scaled per layer.
        Only meaningful for fixed mode; shares the canvas cache.
        """
        oy, ox = self._offset
        return NoiseField(self.mode, self.seed, self._cache, (oy + dy, ox + dx))

    def get(self, key: str, hw: tuple[int, int], scale: int = 1,
            batch: int = 1, device="cpu", dtype=torch.float32):
        if self.mode == "zero":
            return None
        h, w = hw
        if self.mode == "random":
            g = self._seq.next(key)
            return torch.randn(batch, 1, h, w, generator=g).to(device=device, dtype=dtype)
        m = self._MARGIN
        ck = (key, h, w)
        if ck not in self._cache:
            g = substream(self.seed, f"noise/{key}/{h}x{w}")
            self._cache[ck] = torch.randn(1, 1, h + 2 * m, w + 2 * m, generator=g)
        oy, ox = self._offset[0] * scale, self._offset[1] * scale
        if abs(oy) > m or abs(ox) > m:
            raise ValueError(f"noise shift ({oy},{ox}) exceeds canvas margin {m}")
        canvas = self._cache[ck]
        out = canvas[:, :, m - oy:m - oy + h, m - ox:m - ox + w]
        return out.to(device=device, dtype=dtype)


def modulated_conv2d(x: torch.Tensor, weight: torch.Tensor, style: torch.Tensor,
                     dilation: int = 1, demodulate: bool = True,
                     eps: float = 1e-8) -> torch.Tensor:
    """Conv2d with per-sample style modulation and optional demodulation.

    x (B,Ci,H,W), weight (Co,Ci,kh,kw), style (B,Ci). Padding is
    dilation*(k//2) per axis so spatial size is preserved.
    """
    if x.ndim != 4 or weight.ndim != 4 or style.ndim != 2:
        raise ShapeError("modulated_conv2d expects x(B,C,H,W), weight(Co,Ci,k,k), style(B,Ci)")
    b, ci, h, w_sz = x.shape
    co, ci_w, kh, kw = weight.shape
    if ci != ci_w or style.shape[0] != b or style.shape[1] != ci:
        raise ShapeError(
            f"channel mismatch: x has {ci}, weight expects {ci_w}, style is {tuple(style.shape)}")
    w = weight.unsqueeze(0) * style.view(b, 1, ci, 1, 1)
    if demodulate:
        d = torch.rsqrt((w * w).sum(dim=(2, 3, 4)) + eps)
        w = w * d.view(b, co, 1, 1, 1)
    # grouped conv runs all samples with their own kernels in one call
    x = x.reshape(1, b * ci, h, w_sz)
    w = w.reshape(b * co, ci, kh, kw)
    pad = (dilation * (kh // 2), dilation * (kw // 2))
    y = F.conv2d(x, w, padding=pad, dilation=dilation, groups=b)
    return y.view(b, co, y.shape[2], y.shape[3])


_SMOOTH_CACHE: dict[tuple, torch.Tensor] = {}


def _smooth_kernel(dtype, device) -> torch.Tensor:
    key = (str(dtype), str(device))
    k = _SMOOTH_CACHE.get(key)
    if k is None:
        t = torch.tensor([1.0, 2.0, 1.0], dtype=dtype, device=device)
        k = torch.outer(t, t).div_(16.0).view(1, 1, 3, 3)
        _SMOOTH_CACHE[key] = k
    return k


def binomial_smooth(x: torch.Tensor, dilation: int = 1) -> torch.Tensor:
    """Depthwise [1,2,1]x[1,2,1]/16 smoothing with dilation-aware padding."""
    c = x.shape[1]
    k = _smooth_kernel(x.dtype, x.device).expand(c, 1, 3, 3)
    return F.conv2d(x, k, padding=dilation, dilation=dilation, groups=c)


def upsample2(x: torch.Tensor) -> torch.Tensor:
    """Nearest x2 followed by binomial smoothing (the baseline resampler)."""
    return binomial_smooth(F.interpolate(x, scale_factor=2, mode="nearest"))


def _randn(gen, *shape) -> torch.Tensor:
    return torch.randn(*shape, generator=gen)


class EqualLinear(nn.Module):
    """Linear layer with runtime weight scaling (equalized learning rate)."""

    def __init__(self, in_features: int, out_features: int, bias_init: float = 0.0,
                 lr_mul: float = 1.0, activate: bool = False, gen=None):
        super().__init__()
        self.weight = nn.Parameter(_randn(gen, out_features, in_features) / lr_mul)
        self.bias = nn.Parameter(torch.full((out_features,), float(bias_init)))
        self.scale = lr_mul / math.sqrt(in_features)
        self.lr_mul = lr_mul
        self.activate = activate

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.activate:
            y = F.linear(x, self.weight * self.scale)
            return F.leaky_relu(y + self.bias * self.lr_mul, 0.2) * math.sqrt(2)
        return F.linear(x, self.weight * self.scale, self.bias * self.lr_mul)


class MappingNetwork(nn.Module):
    """8-layer MLP from z to w, with input pixel norm and 0.01 lr multiplier."""

    def __init__(self, latent_dim: int = 512, depth: int = 8, lr_mul: float = 0.01, gen=None):
        super().__init__()
        self.layers = nn.ModuleList(
            EqualLinear(latent_dim, latent_dim, lr_mul=lr_mul, activate=True, gen=gen)
            for _ in range(depth))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x = z * torch.rsqrt(z.pow(2).mean(dim=1, keepdim=True) + 1e-8)
        for layer in self.layers:
            x = layer(x)
        return x


class SynthesisLayer(nn.Module):
    """Modulated 3x3 conv + noise + biased leaky relu, optionally upsampling.

    `dilation`/`lifted` select the rewritten form: a lifted upsampling layer
    replaces its x2 resampler with a dilated smoothing of the input and runs
    the conv at the same dilation.
    """

    def __init__(self, in_channels: int, out_channels: int, style_dim: int,
                 upsample: bool = False, gen=None):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.upsample = upsample
        self.weight = nn.Parameter(_randn(gen, out_channels, in_channels, 3, 3))
        self.scale = 1.0 / math.sqrt(in_channels * 9)
        self.affine = EqualLinear(style_dim, in_channels, bias_init=1.0, gen=gen)
        self.noise_scale = nn.Parameter(torch.zeros(1))
        self.bias = nn.Parameter(torch.zeros(out_channels))

    def forward(self, x, w_row, noise=None, dilation: int = 1, lifted: bool = False):
        style = self.affine(w_row)
        if self.upsample:
            if lifted:
                x = binomial_smooth(x, dilation)
            else:
                x = upsample2(x)
        y = modulated_conv2d(x, self.weight * self.scale, style, dilation=dilation)
        if noise is not None:
            y = y + self.noise_scale * noise
        return F.leaky_relu(y + self.bias.view(1, -1, 1, 1), 0.2) * math.sqrt(2)


class ToRgb(nn.Module):
    """Modulated 1x1 projection to RGB, no demodulation."""

    def __init__(self, in_channels: int, style_dim: int, gen=None):
        super().__init__()
        self.weight = nn.Parameter(_randn(gen, 3, in_channels, 1, 1))
        self.scale = 1.0 / math.sqrt(in_channels)
        self.affine = EqualLinear(style_dim, in_channels, bias_init=1.0, gen=gen)
        self.bias = nn.Parameter(torch.zeros(3))

    def forward(self, x, w_row):
        style = self.affine(w_row)
        y = modulated_conv2d(x, self.weight * self.scale, style, demodulate=False)
        return y + self.bias.view(1, -1, 1, 1)


class Generator(nn.Module):
    """Baseline synthesis network plus its mapping MLP."""

    def __init__(self, spec: GeneratorSpec, seed: int = 0):
        super().__init__()
        gen = substream(seed, "generator-init")
        self.spec = spec
        ch = spec.channels
        d = spec.latent_dim
        self.mapping = MappingNetwork(d, gen=gen)
        self.constant = nn.Parameter(_randn(gen, ch(4), 4, 4))
        self.conv1 = SynthesisLayer(ch(4), ch(4), d, gen=gen)
        self.to_rgb1 = ToRgb(ch(4), d, gen=gen)
        self.up_convs = nn.ModuleList()
        self.convs = nn.ModuleList()
        self.to_rgbs = nn.ModuleList()
        res = 8
        while res <= spec.output_resolution:
            self.up_convs.append(SynthesisLayer(ch(res // 2), ch(res), d, upsample=True, gen=gen))
            self.convs.append(SynthesisLayer(ch(res), ch(res), d, gen=gen))
            self.to_rgbs.append(ToRgb(ch(res), d, gen=gen))
            res *= 2
        self.register_buffer("w_avg", torch.zeros(d))

    @property
    def num_style_layers(self) -> int:
        return self.spec.num_style_layers

    def update_mean_latent(self, n: int = 4096, seed: int = 0) -> torch.Tensor:
        g = substream(seed, "mean-latent")
        z = torch.randn(n, self.spec.latent_dim, generator=g)
        with torch.no_grad():
            self.w_avg.copy_(self.mapping(z).mean(dim=0))
        return self.w_avg

    def map_latent(self, z: torch.Tensor, truncation: float = 1.0) -> torch.Tensor:
        """z (B,D) -> broadcast style rows (B,L,D), truncated toward w_avg."""
        if z.ndim != 2 or z.shape[1] != self.spec.latent_dim:
            raise ShapeError(f"z must be (B,{self.spec.latent_dim}), got {tuple(z.shape)}")
        w = self.mapping(z)
        if truncation != 1.0:
            w = self.w_avg + truncation * (w - self.w_avg)
        return w.unsqueeze(1).expand(-1, self.num_style_layers, -1).contiguous()

    def _check_styles(self, w: torch.Tensor):
        if w.ndim != 3 or w.shape[1] != self.num_style_layers or w.shape[2] != self.spec.latent_dim:
            raise ShapeError(
                f"style code must be (B,{self.num_style_layers},{self.spec.latent_dim}), "
                f"got {tuple(w.shape)}")

    def synthesize(self, w: torch.Tensor, noise: NoiseField | None = None) -> torch.Tensor:
        """Native-resolution forward pass. w is (B,L,D); returns RGB (B,3,R,R)."""
        self._check_styles(w)
        nf = noise if noise is not None else NoiseField.zero()
        b = w.shape[0]
        dt, dev = w.dtype, w.device
        x = self.constant.unsqueeze(0).expand(b, -1, -1, -1).to(dt)
        x = self.conv1(x, w[:, 0], noise=nf.get("layer1", (4, 4), batch=b, device=dev, dtype=dt))
        skip = self.to_rgb1(x, w[:, 1])
        res, li = 8, 1
        for up, conv, trgb in zip(self.up_convs, self.convs, self.to_rgbs):
            x = up(x, w[:, li], noise=nf.get(f"layer{2 * li}", (res, res), batch=b, device=dev, dtype=dt))
            x = conv(x, w[:, li + 1], noise=nf.get(f"layer{2 * li + 1}", (res, res), batch=b, device=dev, dtype=dt))
            skip = trgb(x, w[:, li + 2]) + upsample2(skip)
            res, li = res * 2, li + 2
        return skip

    def forward(self, z: torch.Tensor, truncation: float = 1.0,
                noise: NoiseField | None = None) -> torch.Tensor:
        return self.synthesize(self.map_latent(z, truncation), noise=noise)


class GeneratorEX(nn.Module):
    """Rewritten generator whose first layer takes a free-size feature map.

    Shares every parameter with the wrapped baseline Generator. The shallow
    trunk (layers 1..7) runs at the input's spatial size with dilations
    (8,4,4,2,2,1,1); deeper layers upsample as usual, so an (h,w) input
    yields an output of (M*h, M*w) with M = output_resolution // 32.
    """

    def __init__(self, g: Generator):
        super().__init__()
        self.g = g

    @property
    def spec(self) -> GeneratorSpec:
        return self.g.spec

    @property
    def num_style_layers(self) -> int:
        return self.g.num_style_layers

    def map_latent(self, z: torch.Tensor, truncation: float = 1.0) -> torch.Tensor:
        return self.g.map_latent(z, truncation)

    def forward(self, f: torch.Tensor, w: torch.Tensor, noise: NoiseField | None = None,
                skips=None, fusion=None, strict: bool = False) -> torch.Tensor:
        """Synthesize from first-layer features f (B,C,h,w) and styles w (B,L,D).

        `skips`/`fusion` splice encoder features into the trunk after
        odd-numbered layers; see encoder.FusionStack. With strict=True,
        inputs smaller than the 32x32 native size are rejected.
        """
        g = self.g
        g._check_styles(w)
        if f.ndim != 4 or f.shape[1] != g.spec.channels(4):
            raise ShapeError(
                f"first-layer features must be (B,{g.spec.channels(4)},h,w), got {tuple(f.shape)}")
        if f.shape[0] != w.shape[0]:
            raise ShapeError(f"batch mismatch: f {f.shape[0]} vs w {w.shape[0]}")
        h, w_sz = f.shape[2], f.shape[3]
        if min(h, w_sz) < 4:
            raise ShapeError(f"feature input {h}x{w_sz} is below the 4px minimum")
        if strict and min(h, w_sz) < BASE_RESOLUTION:
            raise ShapeError(
                f"feature input {h}x{w_sz} is below the {BASE_RESOLUTION}px working size")
        nf = noise if noise is not None else NoiseField.zero()
        b, dt, dev = f.shape[0], f.dtype, f.device

        def layer_noise(idx, hw, scale):
            return nf.get(f"layer{idx}", hw, scale=scale, batch=b, device=dev, dtype=dt)

        def fuse(slot, x):
            if skips is None or fusion is None:
                return x
            tap = skips.get(slot)
            return x if tap is None else fusion(slot, x, tap)

        x = g.conv1(f, w[:, 0], noise=layer_noise(1, (h, w_sz), 1), dilation=8)
        x = fuse(0, x)
        skip = g.to_rgb1(x, w[:, 1])
        li = 1
        for level, (up, conv, trgb) in enumerate(zip(g.up_convs, g.convs, g.to_rgbs), start=1):
            res = 4 << level
            if res <= BASE_RESOLUTION:
                d = BASE_RESOLUTION // res
                x = up(x, w[:, li], noise=layer_noise(2 * li, (h, w_sz), 1),
                       dilation=d, lifted=True)
                x = conv(x, w[:, li + 1], noise=layer_noise(2 * li + 1, (h, w_sz), 1), dilation=d)
                x = fuse(level, x)
                skip = trgb(x, w[:, li + 2]) + binomial_smooth(skip, d)
            else:
                s = res // BASE_RESOLUTION
                hw = (h * s, w_sz * s)
                x = up(x, w[:, li], noise=layer_noise(2 * li, hw, s))
                x = conv(x, w[:, li + 1], noise=layer_noise(2 * li + 1, hw, s))
                x = fuse(level, x)
                skip = trgb(x, w[:, li + 2]) + upsample2(skip)
            li += 2
        return skip


def refactor(g: Generator) -> GeneratorEX:
    """Rewrite a baseline generator into its free-size form. Parameters are
    shared, not copied, so the two stay in lockstep under training."""
    return GeneratorEX(g)


def upsample_constant(g: Generator) -> torch.Tensor:
    """The learned constant lifted to the 32x32 working size by nearest x8.

    Feeding this to the rewritten generator reproduces the baseline output.
    """
    return F.interpolate(g.constant.detach().unsqueeze(0), scale_factor=8, mode="nearest")


def synthesize(gex: GeneratorEX, f: torch.Tensor, w: torch.Tensor,
               noise: NoiseField | None = None, skips=None, fusion=None,
               strict: bool = False) -> torch.Tensor:
    return gex(f, w, noise=noise, skips=skips, fusion=fusion, strict=strict)


def synthesize_baseline(g: Generator, w: torch.Tensor,
                        noise: NoiseField | None = None) -> torch.Tensor:
    return g.synthesize(w, noise=noise)


def map_z_to_w(g: Generator | GeneratorEX, z: torch.Tensor,
               truncation: float = 1.0) -> torch.Tensor:
    return g.map_latent(z, truncation)


def style_mixing(w_a: torch.Tensor, w_b: torch.Tensor, split: int) -> torch.Tensor:
    """Rows [0,split) from w_a, rows [split,L) from w_b."""
    if w_a.shape != w_b.shape:
        raise ShapeError(f"style codes differ: {tuple(w_a.shape)} vs {tuple(w_b.shape)}")
    n = w_a.shape[1]
    if not 0 <= split <= n:
        raise ValueError(f"split must be in [0,{n}], got {split}")
    return torch.cat([w_a[:, :split], w_b[:, split:]], dim=1)


def receptive_radius(spec: GeneratorSpec) -> int:
    """Radius (in working-resolution units) of the output's dependence on f.

    Each shallow conv contributes its dilation, each shallow resampler the
    smoothing radius at its dilation; deeper levels add 3 taps at a 2^l
    finer scale. Used to size interior crops for equivariance checks.
    """
    r = float(sum(SHALLOW_DILATIONS) + 4 + 2 + 1)
    for level in range(1, spec.num_levels + 1):
        res = 4 << level
        if res > BASE_RESOLUTION:
            r += 3.0 / (res // BASE_RESOLUTION)
    return math.ceil(r)
