"""Deterministic RNG plumbing.

Every run owns a single integer seed. Anything that needs randomness asks for
a named substream; the substream seed is derived by hashing the run seed with
the name, so adding a new consumer never perturbs existing ones.
"""

from __future__ import annotations

import hashlib

import torch

__all__ = ["substream_seed", "substream", "SeedSequence"]


def substream_seed(seed: int, name: str) -> int:
    """Derive a 63-bit seed for the named substream of a run seed."""
    h = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(h[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def substream(seed: int, name: str, device: str | torch.device = "cpu") -> torch.Generator:
    """A torch.Generator seeded for the named substream."""
    g = torch.Generator(device=device)
    g.manual_seed(substream_seed(seed, name))
    return g


class SeedSequence:
    """Hands out per-call generators under a common root seed.

    Each call to `next(name)` appends a counter so repeated draws from the
    same logical stream differ while staying reproducible.
    """

    def __init__(self, seed: int, device: str | torch.device = "cpu"):
        self.seed = int(seed)
        self.device = device
        self._counters: dict[str, int] = {}

    def next(self, name: str) -> torch.Generator:
        i = self._counters.get(name, 0)
        self._counters[name] = i + 1
        return substream(self.seed, f"{name}#{i}", self.device)

    def fixed(self, name: str) -> torch.Generator:
        """Generator for a stream that must not advance between calls."""
        return substream(self.seed, name, self.device)
