"""Image encoder producing first-layer features, style rows and skip taps.

The backbone is a 21-block residual net with squeeze-excitation, running at
three scales: blocks 1-3 at input/2, 4-7 at input/4, 8-21 at input/8. The
first-layer feature map comes from a conv head over the concatenated
outputs of blocks 11, 16 and 21, so its spatial size is input/8 and the
synthesized image lands at 4x the input for an 8x-upscaling generator.

Style rows are predicted per row by linear heads over globally pooled
features: rows 0-6 from the deepest scale, 7-11 from input/4, 12 and up
from input/2. Global pooling keeps the style branch size-free.

Skip taps for trunk fusion come from blocks (0, 3, 7, 11, 16, 21, 21),
matched to generator levels at native resolutions 256 down to 4. The two
slots fed by block 21 get independent fusion convs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeError, SpecError
from .synthesis import Generator, GeneratorEX, GeneratorSpec, NoiseField, style_mixing

__all__ = [
    "EncoderSpec",
    "Encoder",
    "SkipSet",
    "FusionStack",
    "TranslationNet",
    "compose_style",
    "encoder_forward",
    "ALLOWED_DEPTHS",
]

# fusion slot -> backbone block whose output feeds it (slot 0 is the 4px end)
TAP_STAGES = (21, 21, 16, 11, 7, 3, 0)
ALLOWED_DEPTHS = (0, 1, 3, 5, 7, 9, 11, 13)


@dataclass(eq=True)
class EncoderSpec:
    num_styles: int
    feature_channels: int
    input_channels: int = 3
    stem_channels: int = 32
    stage_channels: tuple[int, int, int] = (64, 96, 128)
    style_dim: int = 512
    min_style_input: int = 64

    def __post_init__(self):
        if self.num_styles < 8:
            raise SpecError(f"need at least 8 style rows, got {self.num_styles}")
        if len(self.stage_channels) != 3:
            raise SpecError("stage_channels must give widths for /2, /4, /8")

    @classmethod
    def for_generator(cls, gspec: GeneratorSpec, **kw) -> "EncoderSpec":
        return cls(num_styles=gspec.num_style_layers,
                   feature_channels=gspec.channels(4), **kw)

    @classmethod
    def desk(cls, gspec: GeneratorSpec, **kw) -> "EncoderSpec":
        """Slim widths sized for CPU-budget training runs."""
        kw.setdefault("stem_channels", 16)
        kw.setdefault("stage_channels", (32, 48, 64))
        return cls.for_generator(gspec, **kw)

    def tap_channels(self, slot: int) -> int:
        stage = TAP_STAGES[slot]
        if stage == 0:
            return self.stem_channels
        return self.stage_channels[0] if stage <= 3 else \
            self.stage_channels[1] if stage <= 7 else self.stage_channels[2]

    def to_dict(self) -> dict:
        return {
            "num_styles": self.num_styles,
            "feature_channels": self.feature_channels,
            "input_channels": self.input_channels,
            "stem_channels": self.stem_channels,
            "stage_channels": list(self.stage_channels),
            "style_dim": self.style_dim,
            "min_style_input": self.min_style_input,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        d = dict(d)
        d["stage_channels"] = tuple(d["stage_channels"])
        return cls(**d)


class SEModule(nn.Module):
    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        mid = max(channels // reduction, 4)
        self.fc1 = nn.Conv2d(channels, mid, 1)
        self.fc2 = nn.Conv2d(mid, channels, 1)

    def forward(self, x):
        s = F.adaptive_avg_pool2d(x, 1)
        s = torch.sigmoid(self.fc2(F.relu(self.fc1(s))))
        return x * s


class IRBlock(nn.Module):
    """BN -> conv -> BN -> PReLU -> conv(stride) -> BN -> SE, plus shortcut."""

    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.bn0 = nn.BatchNorm2d(cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, 1, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.act = nn.PReLU(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, stride, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.se = SEModule(cout)
        if cin == cout and stride == 1:
            self.shortcut = nn.Identity()
        else:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        y = self.bn0(x)
        y = self.act(self.bn1(self.conv1(y)))
        y = self.bn2(self.conv2(y))
        return self.se(y) + self.shortcut(x)


class Backbone(nn.Module):
    """Stem plus 21 residual blocks; returns the tapped activations."""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        c1, c2, c3 = spec.stage_channels
        self.stem = nn.Sequential(
            nn.Conv2d(spec.input_channels, spec.stem_channels, 3, 1, 1, bias=False),
            nn.BatchNorm2d(spec.stem_channels),
            nn.PReLU(spec.stem_channels))
        blocks = []
        widths = [spec.stem_channels]
        for i in range(1, 22):
            if i == 1:
                blocks.append(IRBlock(widths[-1], c1, stride=2))
                widths.append(c1)
            elif i == 4:
                blocks.append(IRBlock(widths[-1], c2, stride=2))
                widths.append(c2)
            elif i == 8:
                blocks.append(IRBlock(widths[-1], c3, stride=2))
                widths.append(c3)
            else:
                blocks.append(IRBlock(widths[-1], widths[-1]))
                widths.append(widths[-1])
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x, taps=(0, 3, 7, 11, 16, 21)) -> dict[int, torch.Tensor]:
        want = set(taps)
        out = {}
        y = self.stem(x)
        if 0 in want:
            out[0] = y
        for i, block in enumerate(self.blocks, start=1):
            y = block(y)
            if i in want:
                out[i] = y
        return out


@dataclass
class SkipSet:
    """Taps destined for trunk fusion, keyed by fusion slot."""

    depth: int
    taps: dict[int, torch.Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if self.depth not in ALLOWED_DEPTHS:
            raise ValueError(f"fusion depth must be one of {ALLOWED_DEPTHS}, got {self.depth}")

    def get(self, slot: int):
        return self.taps.get(slot)

    def __len__(self):
        return len(self.taps)


def active_slots(depth: int) -> range:
    """Fusion slots engaged at trunk depth `depth` (an odd layer index)."""
    if depth not in ALLOWED_DEPTHS:
        raise ValueError(f"fusion depth must be one of {ALLOWED_DEPTHS}, got {depth}")
    return range((depth + 1) // 2)


class Encoder(nn.Module):
    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec
        c1, c2, c3 = spec.stage_channels
        self.backbone = Backbone(spec)
        self.feature_head = nn.Sequential(
            nn.Conv2d(3 * c3, c3, 3, 1, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(c3, spec.feature_channels, 3, 1, 1))
        heads = []
        for row in range(spec.num_styles):
            src = c3 if row < 7 else c2 if row < 12 else c1
            heads.append(nn.Linear(src, spec.style_dim))
        self.style_heads = nn.ModuleList(heads)
        self.register_buffer("latent_offset", torch.zeros(spec.style_dim))

    def set_latent_offset(self, w_avg: torch.Tensor):
        """Anchor predicted styles at a generator's mean latent."""
        with torch.no_grad():
            self.latent_offset.copy_(w_avg)

    def _check_structure_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.spec.input_channels:
            raise ShapeError(
                f"expected (B,{self.spec.input_channels},H,W), got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h % 8 or w % 8:
            raise ShapeError(f"input {h}x{w} not divisible by 8; pad it first")
        if min(h, w) < 32:
            raise ShapeError(f"input {h}x{w} below the 32px minimum")

    def encode_feature(self, x: torch.Tensor, depth: int = 0):
        """First-layer features (input/8) and the skip taps for `depth`."""
        self._check_structure_input(x)
        slots = active_slots(depth)
        stages = {0, 3, 7, 11, 16, 21} if slots else {11, 16, 21}
        taps = self.backbone(x, taps=sorted(stages))
        f = self.feature_head(torch.cat([taps[11], taps[16], taps[21]], dim=1))
        skips = SkipSet(depth, {s: taps[TAP_STAGES[s]] for s in slots})
        return f, skips

    def encode_style(self, x: torch.Tensor) -> torch.Tensor:
        """Per-row style predictions from globally pooled features."""
        if x.ndim != 4 or x.shape[1] != self.spec.input_channels:
            raise ShapeError(
                f"expected (B,{self.spec.input_channels},H,W), got {tuple(x.shape)}")
        if min(x.shape[-2:]) < self.spec.min_style_input:
            raise ShapeError(
                f"style input {x.shape[-2]}x{x.shape[-1]} below "
                f"{self.spec.min_style_input}px minimum")
        taps = self.backbone(x, taps=(3, 7, 21))
        pools = {
            2: F.adaptive_avg_pool2d(taps[21], 1).flatten(1),
            1: F.adaptive_avg_pool2d(taps[7], 1).flatten(1),
            0: F.adaptive_avg_pool2d(taps[3], 1).flatten(1),
        }
        rows = []
        for i, head in enumerate(self.style_heads):
            src = 2 if i < 7 else 1 if i < 12 else 0
            rows.append(head(pools[src]))
        return torch.stack(rows, dim=1) + self.latent_offset

    def forward(self, x1: torch.Tensor, x2: torch.Tensor, depth: int = 0):
        f, skips = self.encode_feature(x1, depth)
        w = self.encode_style(x2)
        return f, skips, w


class FusionStack(nn.Module):
    """Per-slot residual convs splicing encoder taps into the trunk."""

    def __init__(self, gspec: GeneratorSpec, espec: EncoderSpec):
        super().__init__()
        n_slots = min(7, gspec.num_levels + 1)
        blocks = []
        for slot in range(n_slots):
            gen_ch = gspec.channels(4 << slot)
            tap_ch = espec.tap_channels(slot)
            blocks.append(nn.Sequential(
                nn.Conv2d(gen_ch + tap_ch, gen_ch, 3, 1, 1), nn.LeakyReLU(0.2),
                nn.Conv2d(gen_ch, gen_ch, 3, 1, 1)))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, slot: int, x: torch.Tensor, tap: torch.Tensor) -> torch.Tensor:
        if slot >= len(self.blocks):
            raise ValueError(f"no fusion conv for slot {slot}")
        if x.shape[-2:] != tap.shape[-2:]:
            raise ShapeError(
                f"slot {slot}: trunk {tuple(x.shape[-2:])} vs tap {tuple(tap.shape[-2:])}")
        return x + self.blocks[slot](torch.cat([x, tap], dim=1))


def fuse_skip(fusion: FusionStack, slot: int, x: torch.Tensor,
              tap: torch.Tensor) -> torch.Tensor:
    """Splice one tap into the trunk at the given slot."""
    return fusion(slot, x, tap)


class TranslationNet(nn.Module):
    """Small 3->3 net nudging sketches or label rasters toward photos.

    Two stride-2 convs, two residual blocks, two upsampling convs, width 16.
    """

    def __init__(self, width: int = 16, channels: int = 3):
        super().__init__()
        w = width
        self.down = nn.Sequential(
            nn.Conv2d(channels, w, 3, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(w, w, 3, 2, 1), nn.LeakyReLU(0.2))
        self.res1 = nn.Sequential(
            nn.Conv2d(w, w, 3, 1, 1), nn.LeakyReLU(0.2), nn.Conv2d(w, w, 3, 1, 1))
        self.res2 = nn.Sequential(
            nn.Conv2d(w, w, 3, 1, 1), nn.LeakyReLU(0.2), nn.Conv2d(w, w, 3, 1, 1))
        self.up1 = nn.Conv2d(w, w, 3, 1, 1)
        self.up2 = nn.Conv2d(w, channels, 3, 1, 1)

    def forward(self, x):
        h, w_sz = x.shape[-2:]
        if h % 4 or w_sz % 4:
            raise ShapeError(f"input {h}x{w_sz} not divisible by 4")
        y = self.down(x)
        y = y + self.res1(y)
        y = y + self.res2(y)
        y = F.leaky_relu(self.up1(F.interpolate(y, scale_factor=2, mode="nearest")), 0.2)
        y = self.up2(F.interpolate(y, scale_factor=2, mode="nearest"))
        return torch.tanh(y)


def compose_style(w_structure: torch.Tensor, w_texture: torch.Tensor,
                  split: int = 7) -> torch.Tensor:
    """First `split` rows from the structure code, the rest from texture."""
    return style_mixing(w_structure, w_texture, split)


def encoder_forward(encoder: Encoder, gex: GeneratorEX, x1: torch.Tensor,
                    x2: torch.Tensor, depth: int = 0,
                    noise: NoiseField | None = None,
                    fusion: FusionStack | None = None) -> torch.Tensor:
    """Encode, then synthesize: the full image-to-image path."""
    f, skips, w = encoder(x1, x2, depth)
    return gex(f, w, noise=noise, skips=skips, fusion=fusion)
