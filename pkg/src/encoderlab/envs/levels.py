"""Train/test level splits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SEED_SPACE = 2**31


@dataclass(frozen=True)
class LevelSet:
    """Either a fixed set of ``n_levels`` seeds drawn from ``base_seed`` or every seed.

    ``n_levels=None`` is the full distribution. Test levels for a restricted
    set come from the full distribution with the training seeds excluded.
    """

    n_levels: Optional[int] = None
    base_seed: int = 0
    seeds: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_levels is None:
            seeds: tuple[int, ...] = ()
        else:
            if self.n_levels < 1:
                raise ValueError(f"n_levels must be positive, got {self.n_levels}")
            rng = np.random.default_rng([self.base_seed, 0x1E7E15])
            seeds = tuple(int(s) for s in rng.choice(SEED_SPACE, size=self.n_levels, replace=False))
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "_lookup", frozenset(seeds))

    @classmethod
    def restricted(cls, n_levels: int, base_seed: int = 0) -> "LevelSet":
        return cls(n_levels, base_seed)

    @classmethod
    def full(cls, base_seed: int = 0) -> "LevelSet":
        return cls(None, base_seed)

    @property
    def is_full(self) -> bool:
        return self.n_levels is None

    def __contains__(self, seed: int) -> bool:
        return self.is_full or int(seed) in self._lookup

    def sample(self, rng: np.random.Generator, split: str = "train") -> int:
        if split == "train":
            if self.is_full:
                return int(rng.integers(SEED_SPACE))
            return self.seeds[int(rng.integers(len(self.seeds)))]
        if split == "test":
            while True:
                seed = int(rng.integers(SEED_SPACE))
                if self.is_full or seed not in self._lookup:
                    return seed
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")

    def describe(self) -> str:
        return "full" if self.is_full else f"restricted({self.n_levels}, seed={self.base_seed})"
