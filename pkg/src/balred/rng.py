"""Portable seeded sampling.

A 64-bit linear congruential generator (Knuth's MMIX constants)::

    state <- (6364136223846793005 * state + 1442695040888963407) mod 2**64
    uniform = (state >> 11) * 2**-53

The seed is used as the initial state.  Every platform reproduces the same
sample points for the same seed.
"""
from __future__ import annotations

import numpy as np

_MUL = 6364136223846793005
_INC = 1442695040888963407
_MASK = (1 << 64) - 1


class Lcg64:
    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.state = int(seed) & _MASK

    def next_uint64(self) -> int:
        self.state = (_MUL * self.state + _INC) & _MASK
        return self.state

    def uniform(self, n: int | None = None):
        if n is None:
            return (self.next_uint64() >> 11) * (1.0 / (1 << 53))
        return np.array([(self.next_uint64() >> 11) * (1.0 / (1 << 53)) for _ in range(n)])

    def box(self, lo, hi, n: int) -> np.ndarray:
        """``n`` points uniform in the box, shape (dim, n); row-major draw order."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        u = self.uniform(n * lo.size).reshape(n, lo.size).T
        return lo[:, None] + (hi - lo)[:, None] * u
