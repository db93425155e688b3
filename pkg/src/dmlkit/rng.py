"""Portable 64-bit pseudo-random number generation.

Every random choice in this package (fold shuffles, bootstrap draws,
feature subsets, simulated treatments and noise) comes from the SplitMix64
generator so that results are bit-reproducible across platforms, thread
counts, and the compiled/pure-NumPy tree backends.

SplitMix64 update equations (Steele, Lea & Flood 2014; Vigna's reference
implementation).  With 64-bit wrapping arithmetic and GAMMA =
0x9E3779B97F4A7C15, the k-th output of a stream with base state ``s`` is

    z = s + k * GAMMA
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out_k = z ^ (z >> 31)

Because the output is a pure function of (base state, counter k), blocks of
draws can be produced either sequentially (C loop) or vectorised (NumPy),
with identical results.  Derived quantities are defined as:

* uniform in (0, 1]:  ((out >> 11) + 1) * 2**-53
* bounded integer in [0, b):  out % b
* standard normals: Box-Muller pairs, z0 = sqrt(-2 ln u1) cos(2 pi u2),
  z1 = sqrt(-2 ln u1) sin(2 pi u2), consuming two draws per pair
* permutations: Fisher-Yates, j = draw % (i + 1) for i = n-1 .. 1

Substreams are derived by hashing, ``base = mix64(parent_seed ^ index)``,
so that folds, trees, and Monte-Carlo replications each own an independent
stream regardless of scheduling.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GAMMA = 0x9E3779B97F4A7C15
_MULT1 = 0xBF58476D1CE4E5B9
_MULT2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer: bijective mixing of a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MULT1) & MASK64
    z = ((z ^ (z >> 27)) * _MULT2) & MASK64
    return (z ^ (z >> 31)) & MASK64


def substream(seed: int, index: int) -> int:
    """Base state for the ``index``-th substream of ``seed``."""
    return mix64((seed ^ index) & MASK64)


def _mix_vec(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MULT1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MULT2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """A SplitMix64 stream with an explicit draw counter.

    The stream state never mutates beyond the counter, so a stream can be
    reconstructed from ``(base, counter)`` at any point; the Cython tree
    kernel resumes streams this way.
    """

    __slots__ = ("base", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.base = seed & MASK64
        self.counter = counter

    def next_u64(self) -> int:
        self.counter += 1
        return mix64((self.base + self.counter * GAMMA) & MASK64)

    def block_u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw outputs as a uint64 array (vectorised)."""
        ks = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix_vec(np.uint64(self.base) + ks * np.uint64(GAMMA))

    def uniforms(self, n: int) -> np.ndarray:
        """n uniforms in (0, 1]."""
        z = self.block_u64(n)
        return ((z >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * 2.0**-53

    def normals(self, n: int) -> np.ndarray:
        """n standard normal draws via Box-Muller (consumes 2*ceil(n/2))."""
        m = (n + 1) // 2
        u1 = self.uniforms(m)
        u2 = self.uniforms(m)
        r = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(ang)
        out[1::2] = r * np.sin(ang)
        return out[:n]

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers in [0, bound) via modulo reduction."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (self.block_u64(n) % np.uint64(bound)).astype(np.int64)

    def bernoulli(self, p: np.ndarray) -> np.ndarray:
        """One 0/1 draw per entry of ``p`` (success iff uniform <= p)."""
        p = np.asarray(p, dtype=np.float64)
        return (self.uniforms(p.size) <= p.ravel()).astype(np.float64).reshape(p.shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of 0..n-1."""
        perm = np.arange(n, dtype=np.int64)
        if n < 2:
            return perm
        draws = self.block_u64(n - 1)
        for idx, i in enumerate(range(n - 1, 0, -1)):
            j = int(draws[idx] % np.uint64(i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm
