"""Two procedurally generated 64x64 games with level splits and a vector wrapper."""

from __future__ import annotations

import csv
from importlib import resources

from .analysis import SamplingError, sample_analysis_state, sample_analysis_states
from .base import (ACTIONS, HORIZON, MAX_SHIFT, NUM_ACTIONS, OBS_SHAPE, AnalysisConstraintError,
                   EpisodeDoneError, Game, Snapshot, Sprite, to_float)
from .corridor import Corridor
from .frames import read_pnm, write_pgm, write_ppm
from .levels import LevelSet
from .shoal import Shoal
from .vector import VectorEnv

GAMES = {"shoal": Shoal, "corridor": Corridor}


def make_game(name: str) -> Game:
    try:
        return GAMES[name]()
    except KeyError:
        raise ValueError(f"unknown game {name!r}; choose from {sorted(GAMES)}") from None


def make_vector_env(name: str, n: int, levels: LevelSet, base_seed: int = 0, split: str = "train") -> VectorEnv:
    if name not in GAMES:
        raise ValueError(f"unknown game {name!r}; choose from {sorted(GAMES)}")
    return VectorEnv(GAMES[name], n, levels, base_seed, split)


def random_policy_return(name: str, episodes: int = 1000, seed: int = 0) -> float:
    """Mean raw return of a uniform-random policy over full-distribution levels."""
    import numpy as np

    game = make_game(name)
    rng = np.random.default_rng([seed, 0xA11])
    levels = LevelSet.full()
    total = 0.0
    for _ in range(episodes):
        game.reset(levels.sample(rng))
        done = False
        while not done:
            _, r, done, _ = game.step(int(rng.integers(game.num_actions)))
            total += r
    return total / episodes


def game_constants() -> dict[str, tuple[float, float]]:
    """Pinned (R_min, R_max) for the bundled games."""
    text = resources.files("encoderlab.data").joinpath("game_constants.csv").read_text()
    return {row["env"]: (float(row["R_min"]), float(row["R_max"])) for row in csv.DictReader(text.splitlines())}
