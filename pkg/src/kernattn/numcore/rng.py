"""Seeded, counter-based random number generation.

Every stream is a Philox generator: the seed fixes the key and the draw
index fixes the counter, so a value depends only on (seed, position) and
not on the platform or on unrelated streams.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Deterministic random stream.

    Parameters
    ----------
    seed : int
        Non-negative 64-bit seed.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.Philox(seed))

    def spawn(self, *keys: int) -> "Rng":
        """Independent child stream identified by ``keys``; the parent is not advanced."""
        words = np.random.SeedSequence([self.seed, *[int(k) for k in keys]]).generate_state(2, np.uint64)
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.Philox(key=words))
        return child

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size=None, p=None) -> np.ndarray:
        return self._gen.choice(n, size=size, p=p)


def uniform_init(rng: Rng, shape, fan_in: int) -> np.ndarray:
    """Weights drawn uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
