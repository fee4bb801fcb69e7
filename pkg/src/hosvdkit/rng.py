"""Pinned pseudorandom generator used wherever determinism is contractual.

SplitMix64 in counter form: output i of a stream seeded with ``s`` is
``mix64(s + (i + 1) * GAMMA)`` with the constants below, so a stream can be
generated in vectorized blocks while staying bit-identical to sequential
draws. Derived quantities are likewise pinned:

* uniform doubles in [0, 1): ``(x >> 11) * 2**-53``
* standard normals: Box-Muller on pairs of uniforms, the first mapped into
  (0, 1] as ``((x >> 11) + 1) * 2**-53`` so the log never sees zero
* bounded integers: ``x % n`` (modulo; bias < 2**-50 for the sizes used here)
* permutations: Fisher-Yates, descending index, one bounded draw per step
"""

from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = float(2.0**-53)


def mix64(z: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """SplitMix64 finalizer; accepts a scalar or an array of uint64."""
    with np.errstate(over="ignore"):  # wraparound is the point
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *tags: int) -> int:
    """Fold integer tags into a seed to get an independent substream."""
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for t in tags:
            z = mix64((z + GAMMA) ^ np.uint64(t & 0xFFFFFFFFFFFFFFFF))
    return int(z)


class PinnedRng:
    """Deterministic stream of uint64 words and values derived from them."""

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._count = 0

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` uint64 words of the stream."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        return mix64(self._seed + idx * GAMMA)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles uniform in [0, 1)."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _U53

    def normal(self, n: int) -> np.ndarray:
        """``n`` standard normal doubles via Box-Muller."""
        m = (n + 1) // 2
        w = self.raw(2 * m)
        u1 = ((w[:m] >> np.uint64(11)).astype(np.float64) + 1.0) * _U53
        u2 = (w[m:] >> np.uint64(11)).astype(np.float64) * _U53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return out[:n]

    def below(self, bound: int) -> int:
        """One integer uniform in [0, bound)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return int(self.raw(1)[0] % np.uint64(bound))

    def permutation(self, n: int) -> np.ndarray:
        """A permutation of range(n) by the pinned Fisher-Yates walk."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
