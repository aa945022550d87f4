"""Sampling frames that satisfy the translation-probe constraints."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .base import Game, Snapshot, analysis_violations
from .levels import LevelSet

Policy = Callable[[np.ndarray], int]


class SamplingError(RuntimeError):
    pass


def sample_analysis_state(game: Game, policy: Optional[Policy], rng: np.random.Generator,
                          levels: Optional[LevelSet] = None, max_episodes: int = 200) -> Snapshot:
    """Roll out one fresh episode at a time and return one valid frame from it.

    A frame is valid when, after dropping sprites that touch the free border,
    the agent sits in the central square and is not alone. ``policy`` maps a
    uint8 frame to an action; ``None`` acts uniformly at random.
    """
    levels = levels or LevelSet.full()
    for _ in range(max_episodes):
        obs = game.reset(levels.sample(rng, "train"))
        candidates: list[Snapshot] = []
        done = False
        while not done:
            snap = game.snapshot()
            if not analysis_violations(snap.foreground):
                candidates.append(snap)
            action = int(rng.integers(game.num_actions)) if policy is None else int(policy(obs))
            obs, _, done, _ = game.step(action)
        if candidates:
            return candidates[int(rng.integers(len(candidates)))]
    raise SamplingError(f"{game.name}: no frame met the probe constraints in {max_episodes} episodes")


def sample_analysis_states(game: Game, policy: Optional[Policy], n: int, rng: np.random.Generator,
                           levels: Optional[LevelSet] = None, max_episodes: int = 200) -> list[Snapshot]:
    """``n`` frames, each from a different episode."""
    return [sample_analysis_state(game, policy, rng, levels, max_episodes) for _ in range(n)]
