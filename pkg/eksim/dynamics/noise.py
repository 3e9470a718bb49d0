"""
Counter-based Gaussian noise.

Every draw is addressed by (master seed, purpose, key..., step): the
(seed, purpose, key) tuple is hashed into a Philox key, and the step index
sits in the high words of the Philox counter. Row j of the array returned
for a step belongs to particle j. Draws therefore do not depend on the
order in which replicates, steps or Picard blocks are executed.
"""
from enum import Enum

import numpy as np


class Purpose(Enum):
    initial = 1
    dynamics = 2
    picard = 3
    covariance = 4
    excursion = 5
    pilot = 6


class NoiseStream:
    __slots__ = ("seed", "purpose", "key", "_philox_key")

    def __init__(self, seed: int, purpose: Purpose, *key: int):
        self.seed = int(seed)
        self.purpose = purpose
        self.key = tuple(int(k) for k in key)

        seq = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(purpose.value,) + self.key)
        self._philox_key = seq.generate_state(2, dtype=np.uint64)

    def generator(self, step: int = 0) -> np.random.Generator:
        counter = np.array([0, 0, step, 0], dtype=np.uint64)
        return np.random.Generator(
            np.random.Philox(key=self._philox_key, counter=counter))

    def gaussian(self, step: int, shape) -> np.ndarray:
        return self.generator(step).standard_normal(shape)

    def __repr__(self):
        return f"NoiseStream(seed={self.seed}, {self.purpose.name}, {self.key})"


class CoarsenedNoise:
    """
    A stream read on a grid `factor` times coarser: the draw for coarse step
    k is the sum of fine draws k*factor .. k*factor + factor - 1 divided by
    sqrt(factor), so both grids see the same Brownian path.
    """

    def __init__(self, fine: NoiseStream, factor: int):
        if factor < 1:
            raise ValueError("factor must be >= 1")
        self.fine = fine
        self.factor = int(factor)

    def gaussian(self, step: int, shape) -> np.ndarray:
        first = step * self.factor
        total = self.fine.gaussian(first, shape)
        for i in range(1, self.factor):
            total = total + self.fine.gaussian(first + i, shape)
        return total / np.sqrt(self.factor)

    def __repr__(self):
        return f"CoarsenedNoise({self.fine!r}, factor={self.factor})"
