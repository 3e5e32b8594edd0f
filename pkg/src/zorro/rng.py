"""Splittable, counter-based random streams.

Backed by numpy's Philox bit generator: a stream is identified by a 64-bit
seed plus a path of integer keys, so any sub-stream (a layer's weights, the
data for batch 17, ...) can be regenerated independently and in any order.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & _MASK64


class Rng:
    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed) & _MASK64
        self.path = tuple(path)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(_key(p) for p in self.path))
        self._gen = np.random.Generator(np.random.Philox(seq))

    def split(self, *keys) -> "Rng":
        """Independent child stream; same keys always give the same stream."""
        return Rng(self.seed, self.path + keys)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(size) * scale

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, high: int, size=None) -> np.ndarray:
        return self._gen.integers(0, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"
