"""SplitMix64: a small, portable counter-based generator for dataset synthesis.

Streams are addressed by a master seed plus an integer path, e.g.
``Stream.derive(seed, split, index)``, so every utterance owns an
independent stream and regenerating any subset is cheap.

Conversions (fixed per data format version 1):
  uniform  = (u64 >> 11) * 2**-53                      in [0, 1)
  integer  = lo + floor(uniform * (hi - lo + 1))        in [lo, hi]
  normal   = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)         one per pair (u1, u2)
"""
from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class Stream:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    @classmethod
    def derive(cls, master: int, *path: int) -> "Stream":
        z = master & MASK64
        for k in path:
            z = mix64(z + GAMMA * (k + 1))
        return cls(z)

    def u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GAMMA)
            out = _mix64_array(z)
        self.state = (self.state + n * GAMMA) & MASK64
        return out

    def uniform(self, n: int) -> np.ndarray:
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def integers(self, lo: int, hi: int, n: int) -> np.ndarray:
        """Uniform integers in the closed range [lo, hi]."""
        return lo + np.floor(self.uniform(n) * (hi - lo + 1)).astype(np.int64)

    def integer(self, lo: int, hi: int) -> int:
        return int(self.integers(lo, hi, 1)[0])

    def normal(self, n: int) -> np.ndarray:
        u = self.uniform(2 * n).reshape(n, 2)
        return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
