"""Episode-return evaluation on a train or test split."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..autodiff import functional as F
from ..autodiff.tensor import Tensor, no_grad
from ..envs import make_vector_env
from ..envs.base import to_float
from ..envs.levels import LevelSet

ActFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def actor_critic_policy(net, greedy: bool = False) -> ActFn:
    def act(obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        with no_grad():
            logits, _ = net(Tensor(to_float(obs)))
        dist = F.Categorical(logits)
        return dist.mode() if greedy else dist.sample(rng)
    return act


def q_policy(net, epsilon: float = 0.0) -> ActFn:
    def act(obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        with no_grad():
            q = net(Tensor(to_float(obs))).data
        greedy = q.argmax(axis=-1)
        explore = rng.random(len(obs)) < epsilon
        return np.where(explore, rng.integers(q.shape[-1], size=len(obs)), greedy)
    return act


def episode_returns(act: ActFn, game: str, levels: LevelSet, split: str, episodes: int,
                    seed: int, num_envs: int = 16) -> list[float]:
    """Returns of exactly ``episodes`` episodes, in a seed-determined order.

    Instance ``i`` plays episodes ``i, i + n, ...`` so the set of levels does
    not depend on how long each episode lasts.
    """
    n = min(num_envs, episodes)
    quota = np.array([len(range(i, episodes, n)) for i in range(n)])
    venv = make_vector_env(game, n, levels, base_seed=seed, split=split)
    rng = np.random.default_rng([seed, 0xE7A1])
    obs = venv.reset()
    results: list[list[float]] = [[] for _ in range(n)]
    while any(len(r) < q for r, q in zip(results, quota)):
        actions = act(obs, rng)
        obs, _, _, infos = venv.step(actions)
        for i, info in enumerate(infos):
            if "episode_return" in info and len(results[i]) < quota[i]:
                results[i].append(info["episode_return"])
    out = []
    for k in range(max(quota)):
        out += [r[k] for r in results if k < len(r)]
    return out
