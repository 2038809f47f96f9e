"""Deterministic, splittable random streams.

Every random draw in the package goes through :class:`Stream`, a
xoshiro256** generator whose 256-bit state is filled from a splitmix64
sequence.  The generator is written out in plain integer arithmetic so the
bit stream (and every distribution built on top of it) is identical on every
platform and every numpy version.

Substreams are derived from the *seed path* of a stream, never from its
current state, so ``stream.spawn(k)`` returns the same generator no matter
how many numbers the parent has already produced.  Datasets use one
substream per instance index which makes generation order-independent.
"""

from __future__ import annotations

import hashlib
import math
from typing import Hashable, Sequence

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step. Returns ``(new_state, output)``."""
    x = (x + _GOLDEN) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def _key_to_int(key: Hashable) -> int:
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        return int(key) & _MASK
    digest = hashlib.blake2b(repr(key).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Stream:
    """xoshiro256** stream seeded through splitmix64."""

    def __init__(self, seed: int = 0, path: tuple[int, ...] = ()):
        self.seed = int(seed) & _MASK
        self.path = tuple(path)
        material = self.seed
        for k in self.path:
            _, material = splitmix64(material ^ _rotl(k, 17))
        sm = material
        state = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            state.append(out)
        if not any(state):
            state[0] = 1
        self._s = state

    def spawn(self, key: Hashable) -> "Stream":
        """Independent child stream identified by ``key``."""
        return Stream(self.seed, self.path + (_key_to_int(key),))

    # raw bits -------------------------------------------------------------
    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def get_state(self) -> dict:
        return {"seed": self.seed, "path": list(self.path), "state": list(self._s)}

    @classmethod
    def from_state(cls, d: dict) -> "Stream":
        s = cls(d["seed"], tuple(d["path"]))
        s._s = [int(v) for v in d["state"]]
        return s

    # distributions ---------------------------------------------------------
    def random(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def random_array(self, n: int) -> np.ndarray:
        return np.array([self.random() for _ in range(n)], dtype=np.float64)

    def normal(self) -> float:
        """Standard normal via Box-Muller (two uniforms per variate)."""
        u1 = self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def integers(self, n: int) -> int:
        """Unbiased integer in ``{0, ..., n-1}`` by rejection."""
        if n <= 0:
            raise ValueError("integers() needs n >= 1")
        if n == 1:
            return 0
        bits = (n - 1).bit_length()
        while True:
            v = self.next_u64() >> (64 - bits)
            if v < n:
                return v

    def choice(self, probs: Sequence[float]) -> int:
        """Inverse-CDF draw from an (unnormalised) probability vector."""
        p = np.asarray(probs, dtype=np.float64)
        c = np.cumsum(p)
        u = self.random() * c[-1]
        idx = int(np.searchsorted(c, u, side="right"))
        # never land on a zero-probability tail entry
        idx = min(idx, len(p) - 1)
        while p[idx] <= 0.0:
            idx -= 1
        return idx

    def permutation(self, n: int) -> list[int]:
        out = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            out[i], out[j] = out[j], out[i]
        return out


def as_stream(seed_or_stream) -> Stream:
    if isinstance(seed_or_stream, Stream):
        return seed_or_stream
    return Stream(0 if seed_or_stream is None else int(seed_or_stream))
