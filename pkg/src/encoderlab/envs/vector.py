"""Batched stepping over independent game instances."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .base import OBS_SHAPE, Game
from .levels import LevelSet


class VectorEnv:
    """``n`` games stepped in lockstep with auto-reset.

    Instance ``i`` draws its level seeds from ``default_rng([base_seed, i])``,
    so each stream is independent of the others and of ``n``. When an episode
    ends, the returned observation is already the first frame of the next one;
    the final frame is in ``infos[i]["terminal_obs"]``.
    """

    def __init__(self, make_game: Callable[[], Game], n: int, levels: LevelSet,
                 base_seed: int = 0, split: str = "train"):
        if n < 1:
            raise ValueError(f"need at least one env, got {n}")
        self.games = [make_game() for _ in range(n)]
        self.levels, self.split, self.n = levels, split, n
        self.rngs = [np.random.default_rng([base_seed, i]) for i in range(n)]
        self.num_actions = self.games[0].num_actions
        self.name = self.games[0].name
        self.r_max = self.games[0].r_max
        self._returns = np.zeros(n)
        self._lengths = np.zeros(n, dtype=np.int64)
        self.level_seeds = np.zeros(n, dtype=np.int64)

    def _reset_one(self, i: int) -> np.ndarray:
        seed = self.levels.sample(self.rngs[i], self.split)
        self.level_seeds[i] = seed
        self._returns[i] = 0.0
        self._lengths[i] = 0
        return self.games[i].reset(seed)

    def reset(self) -> np.ndarray:
        return np.stack([self._reset_one(i) for i in range(self.n)])

    def step(self, actions) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[dict]]:
        actions = np.asarray(actions)
        if actions.shape != (self.n,):
            raise ValueError(f"expected {self.n} actions, got shape {actions.shape}")
        obs = np.empty((self.n,) + OBS_SHAPE, dtype=np.uint8)
        rewards = np.zeros(self.n, dtype=np.float32)
        dones = np.zeros(self.n, dtype=bool)
        infos = []
        for i, game in enumerate(self.games):
            o, r, d, info = game.step(int(actions[i]))
            self._returns[i] += r
            self._lengths[i] += 1
            if d:
                info["terminal_obs"] = o
                info["episode_return"] = float(self._returns[i])
                info["episode_length"] = int(self._lengths[i])
                info["level_seed"] = int(self.level_seeds[i])
                o = self._reset_one(i)
            obs[i], rewards[i], dones[i] = o, r, d
            infos.append(info)
        return obs, rewards, dones, infos
