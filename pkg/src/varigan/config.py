"""Run configuration: a strict, flat JSON schema.

Unknown keys are rejected rather than ignored, and every command writes
its resolved config next to its outputs so runs can be replayed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .synthesis import DESK_CHANNELS, FULL_CHANNELS, GeneratorSpec
from .tasks import TASK_KINDS

__all__ = ["RunConfig", "load_config", "resolve_generator_spec"]

_NOISE_MODES = ("zero", "fixed", "random")
_PROFILES = ("desk", "full")


@dataclass(eq=True)
class RunConfig:
    # architecture
    output_resolution: int = 256
    channel_profile: str = "desk"
    latent_dim: int = 512
    # model sources (archives from this package's checkpoint format)
    generator_checkpoint: str | None = None
    generator_prime_checkpoint: str | None = None
    encoder_checkpoint: str | None = None
    translator_checkpoint: str | None = None
    # task and training
    task: str | None = None
    sr_factors: list[int] = field(default_factory=lambda: [8])
    loss_weights: dict | None = None
    steps: int = 50
    batch_size: int = 2
    lr: float = 1e-4
    pairs: int = 64
    image_size: int = 128
    augment: bool = False
    # inversion / synthesis
    iterations: int = 500
    truncation: float = 1.0
    noise: str = "zero"
    align: bool = False
    pad_inputs: bool = True
    edit_scale: float = 1.0
    # run plumbing
    seed: int = 0
    device: str = "cpu"
    out_dir: str = "out"

    def __post_init__(self):
        r = self.output_resolution
        if r < 32 or r & (r - 1):
            raise ConfigError(f"output_resolution must be a power of two >= 32, got {r}")
        if self.channel_profile not in _PROFILES:
            raise ConfigError(f"channel_profile must be one of {_PROFILES}")
        if self.noise not in _NOISE_MODES:
            raise ConfigError(f"noise must be one of {_NOISE_MODES}")
        if self.task is not None and self.task not in TASK_KINDS:
            raise ConfigError(f"task must be one of {TASK_KINDS}, got {self.task!r}")
        if self.image_size % 8:
            raise ConfigError(f"image_size must divide by 8, got {self.image_size}")
        if not 0.0 <= self.truncation <= 1.0:
            raise ConfigError(f"truncation must be in [0,1], got {self.truncation}")
        if self.iterations < 0 or self.steps < 0:
            raise ConfigError("iterations and steps must be >= 0")
        if self.loss_weights is not None:
            known = {f.name for f in fields(LossWeights)}
            unknown = set(self.loss_weights) - known
            if unknown:
                raise ConfigError(f"unknown loss weight keys: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def merged(self, **overrides) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(d)

    def weights_for(self, kind: str) -> LossWeights:
        base = LossWeights.for_task(kind)
        if self.loss_weights:
            d = base.to_dict()
            d.update(self.loss_weights)
            base = LossWeights.from_dict(d)
        return base

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such config file: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    return RunConfig.from_dict(data)


def resolve_generator_spec(cfg: RunConfig) -> GeneratorSpec:
    source = DESK_CHANNELS if cfg.channel_profile == "desk" else FULL_CHANNELS
    sched = {k: v for k, v in source.items() if k <= cfg.output_resolution}
    return GeneratorSpec(cfg.output_resolution, cfg.latent_dim, sched)
