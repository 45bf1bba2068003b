"""Deterministic pseudo-randomness used by every seeded operation.

SplitMix64 is the single randomness source of this package. It is tiny,
bit-exact across platforms and languages, and trivially parallel: the
state after i steps equals seed + i*GAMMA (mod 2^64), so whole output
blocks can be produced with vectorized integer arithmetic.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_TWO53 = float(1 << 53)


def mix64(z: int) -> int:
    """SplitMix64 finalizer: avalanche a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return (z ^ (z >> 31)) & MASK64


def prng_stream(seed: int, n: int) -> np.ndarray:
    """First ``n`` outputs of SplitMix64 seeded with ``seed`` (uint64 array)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return np.empty(0, dtype=np.uint64)
    idx = np.arange(1, n + 1, dtype=np.uint64)
    z = np.uint64(seed & MASK64) + idx * np.uint64(GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def derive_seed(*parts: int) -> int:
    """Fold integers into a fresh 64-bit seed. Stable across runs."""
    s = 0xA0761D6478BD642F
    for p in parts:
        s = mix64(s ^ (p & MASK64))
        s = (s + GAMMA) & MASK64
    return mix64(s)


class Stream:
    """Sequential SplitMix64 draws with a few convenience distributions."""

    def __init__(self, seed: int):
        self._state = seed & MASK64
        self._steps = 0

    def next_u64(self) -> int:
        self._state = (self._state + GAMMA) & MASK64
        return mix64(self._state)

    def u64s(self, n: int) -> np.ndarray:
        out = prng_stream(self._state, n)
        self._state = (self._state + n * GAMMA) & MASK64
        return out

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles in [0, 1), from the top 53 bits of each output."""
        return (self.u64s(n) >> np.uint64(11)).astype(np.float64) / _TWO53

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * float(self.uniforms(1)[0])

    def normals(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller."""
        m = (n + 1) // 2
        u1 = self.uniforms(m)
        u2 = self.uniforms(m)
        r = np.sqrt(-2.0 * np.log1p(-u1))
        ang = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(ang), r * np.sin(ang)])
        return z[:n]

    def randint(self, bound: int) -> int:
        """Integer in [0, bound)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % bound

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates permutation of range(n)."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def shuffled(self, seq):
        """New list with the elements of ``seq`` in shuffled order."""
        items = list(seq)
        return [items[i] for i in self.permutation(len(items))]
