"""Seeded random streams.

Backed by numpy's PCG64 bit generator, whose output sequence for a given
seed is fixed across platforms and numpy releases. Independent per-sample
streams are derived with ``SeedSequence`` from (base seed, *keys).
"""

from __future__ import annotations

import numpy as np


class Rng:
    def __init__(self, seed: int = 0, *keys: int):
        self.seed = int(seed)
        self.keys = tuple(int(k) for k in keys)
        entropy = [self.seed, *self.keys] if self.keys else self.seed
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def derive(self, *keys: int) -> "Rng":
        """Independent child stream identified by ``keys`` (e.g. epoch, sample index)."""
        return Rng(self.seed, *self.keys, *keys)

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None):
        return self._gen.uniform(lo, hi, size)

    def normal(self, mean: float = 0.0, std: float = 1.0, size=None):
        return self._gen.normal(mean, std, size)

    def integers(self, lo: int, hi: int, size=None):
        """Integers in ``[lo, hi)``."""
        return self._gen.integers(lo, hi, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen
