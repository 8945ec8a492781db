"""Counter-based random streams.

Every random draw in the sampler is keyed by its position in the computation
(seed, chain, iteration, unit, substep), so results do not depend on
scheduling or thread count. Python-level draws derive a numpy Philox
generator from the key; the compiled kernels use the same splitmix64 keying
directly (see _kernels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["mix64", "stream_key", "substream", "SweepKey"]

_MASK = (1 << 64) - 1
_GOLD = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 finalizer; bijective mixing of a 64-bit word."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_key(seed: int, *path: int) -> int:
    """Hash a seed and a key path into a 64-bit stream state."""
    h = mix64(seed & _MASK)
    for c in path:
        h = mix64(h ^ ((c * _GOLD) & _MASK))
    return h


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent numpy generator keyed by (seed, *path)."""
    k0 = stream_key(seed, *path)
    k1 = mix64(k0 ^ _GOLD)
    return np.random.Generator(np.random.Philox(key=np.array([k0, k1], dtype=np.uint64)))


@dataclass(frozen=True)
class SweepKey:
    """Position of one sweep in a run: (seed, chain, iteration).

    Imputation and posterior steps derive their per-unit streams from this
    key; repeating a sweep with the same key reproduces it bit for bit.
    """

    seed: int
    chain: int = 0
    iteration: int = 0

    def generator(self, *path: int) -> np.random.Generator:
        return substream(self.seed, self.chain, self.iteration, *path)
