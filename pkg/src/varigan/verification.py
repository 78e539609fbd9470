"""Self-check battery for the lifted generator.

Runs the invariants that justify trusting the dilated path: agreement
with the baseline at matched size, the output-size law, translation
equivariance, parameter identity between the two forms, and determinism
under fixed seeds. Used by the `verify` CLI command and importable for
ad hoc checks after weight surgery.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import torch

from .checkpoint import parameter_checksum
from .errors import VerificationError
from .rng import substream
from .synthesis import (
    Generator,
    GeneratorEX,
    GeneratorSpec,
    NoiseField,
    receptive_radius,
    refactor,
    upsample_constant,
)

__all__ = ["CheckResult", "VerificationReport", "run_battery", "verify_pair"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    elapsed: float

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.name}: {self.detail} ({self.elapsed:.2f}s)"


@dataclass
class VerificationReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def render(self) -> str:
        lines = [c.line() for c in self.checks]
        n_fail = sum(not c.passed for c in self.checks)
        verdict = "all checks passed" if not n_fail else f"{n_fail} check(s) FAILED"
        lines.append(f"verification: {verdict}")
        return "\n".join(lines)

    def raise_on_failure(self):
        if not self.ok:
            failed = [c.name for c in self.checks if not c.passed]
            raise VerificationError(f"verification failed: {failed}")


def _timed(checks, name, fn):
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as e:  # a crash is a failure with the traceback head as detail
        passed, detail = False, f"raised {type(e).__name__}: {e}"
    checks.append(CheckResult(name, passed, detail, time.perf_counter() - t0))


def _sample_w(g: Generator, batch, seed, name):
    z = torch.randn(batch, g.spec.latent_dim, generator=substream(seed, name))
    return g.map_latent(z)


def check_compatibility(g: Generator, gex: GeneratorEX, seeds=(0, 1, 2), tol=1e-4):
    worst = 0.0
    f0 = upsample_constant(g)
    for seed in seeds:
        w = _sample_w(g, 2, seed, "verify-compat")
        base = g.synthesize(w)
        lifted = gex(f0.expand(w.shape[0], -1, -1, -1), w)
        worst = max(worst, (base - lifted).abs().max().item())
    return worst <= tol, f"max |baseline - lifted| = {worst:.3e} (tol {tol:g})"


def check_shape_law(gex: GeneratorEX, sizes=((32, 32), (40, 56), (56, 44))):
    g = gex
    m = g.spec.upscale_factor
    w = _sample_w(g.g, 1, 0, "verify-shape")
    for h, w_in in sizes:
        f = torch.zeros(1, g.spec.channels(g.spec.base_resolution), h, w_in)
        out = g(f, w)
        want = (1, 3, m * h, m * w_in)
        if tuple(out.shape) != want:
            return False, f"input {h}x{w_in}: got {tuple(out.shape)}, want {want}"
    return True, f"output = ({m}H, {m}W) for {len(sizes)} feature sizes"


def check_equivariance(gex: GeneratorEX, shifts=((1, 0), (0, 2)), tol=1e-4):
    g = gex
    m = g.spec.upscale_factor
    r = receptive_radius(g.spec)
    w = _sample_w(g.g, 1, 3, "verify-equiv")
    f = torch.randn(1, g.spec.channels(g.spec.base_resolution), 96, 96,
                    generator=substream(3, "verify-equiv-f"))
    base = g(f, w)
    worst = 0.0
    for dy, dx in shifts:
        shifted = torch.roll(f, shifts=(dy, dx), dims=(2, 3))
        out = g(shifted, w)
        back = torch.roll(out, shifts=(-dy * m, -dx * m), dims=(2, 3))
        margin = (r + max(abs(dy), abs(dx))) * m
        inner = (slice(None), slice(None),
                 slice(margin, base.shape[2] - margin),
                 slice(margin, base.shape[3] - margin))
        worst = max(worst, (base[inner] - back[inner]).abs().max().item())
    return worst <= tol, f"max interior mismatch = {worst:.3e} (tol {tol:g})"


def check_parameter_identity(g: Generator, gex: GeneratorEX):
    a, b = parameter_checksum(g), parameter_checksum(gex.g)
    shared = all(
        p.data_ptr() == q.data_ptr()
        for (_, p), (_, q) in zip(g.named_parameters(), gex.g.named_parameters())
    )
    ok = a == b and shared
    return ok, f"checksums {'match' if a == b else 'differ'}, storage {'shared' if shared else 'copied'}"


def check_determinism(g: Generator, gex: GeneratorEX):
    w = _sample_w(g, 2, 5, "verify-det")
    f = upsample_constant(g).expand(2, -1, -1, -1)
    a = gex(f, w, noise=NoiseField.fixed(seed=11))
    b = gex(f, w, noise=NoiseField.fixed(seed=11))
    delta = (a - b).abs().max().item()
    return delta == 0.0, f"repeat with fixed noise seed: max delta = {delta:.3e}"


def verify_pair(g: Generator, gex: GeneratorEX) -> VerificationReport:
    report = VerificationReport()
    _timed(report.checks, "compatibility", lambda: check_compatibility(g, gex))
    _timed(report.checks, "shape-law", lambda: check_shape_law(gex))
    _timed(report.checks, "equivariance", lambda: check_equivariance(gex))
    _timed(report.checks, "parameter-identity", lambda: check_parameter_identity(g, gex))
    _timed(report.checks, "determinism", lambda: check_determinism(g, gex))
    return report


def run_battery(spec: GeneratorSpec | None = None, seed: int = 0) -> VerificationReport:
    if spec is None:
        spec = GeneratorSpec.desk(256)
    g = Generator(spec, seed=seed)
    g.update_mean_latent()
    return verify_pair(g, refactor(g))
