"""Deterministic random streams with named substreams.

Every stochastic consumer in the pipeline (weight init, mask sampling, hash
parameters, phantom generation) pulls from its own named substream so that
changing one consumer never perturbs the draws of another.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["Rng"]


def _derive_key(seed: int, name: str) -> int:
    h = hashlib.sha256(f"{seed:#x}/{name}".encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


class Rng:
    """Counter-based generator (Philox) keyed by a 64-bit seed.

    Identical seeds yield identical scalar streams across runs and platforms.
    ``substream(name)`` derives an independent child stream from the parent
    seed and a label; the derivation is pure, so substreams may be created in
    any order.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def substream(self, name: str) -> "Rng":
        return Rng(_derive_key(self.seed, name))

    def normal(self, shape=(), scale: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(size=shape) * scale

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=False)
