"""Score normalisation and aggregate statistics across environments and seeds."""

from __future__ import annotations

import csv
from importlib import resources
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

# env name -> one normalised score per run (seed)
ScoreMatrix = Mapping[str, Sequence[float]]
Statistic = Callable[[ScoreMatrix], float]


def load_constants(mode: Optional[str] = None) -> dict[str, tuple[float, float]]:
    """Bundled (R_min, R_max) per env.

    ``mode`` of ``"easy"`` or ``"hard"`` selects the Procgen tables; ``None``
    gives the two desk games.
    """
    data = resources.files("encoderlab.data")
    if mode is None:
        rows = csv.DictReader(data.joinpath("game_constants.csv").read_text().splitlines())
        return {r["env"]: (float(r["R_min"]), float(r["R_max"])) for r in rows}
    if mode not in ("easy", "hard"):
        raise ValueError(f"mode must be 'easy', 'hard' or None, got {mode!r}")
    rows = csv.DictReader(data.joinpath("procgen_constants.csv").read_text().splitlines())
    return {r["env"]: (float(r["R_min"]), float(r["R_max"])) for r in rows if r["mode"] == mode}


def normalize_score(R: float, env: str, constants: Optional[Mapping[str, tuple[float, float]]] = None) -> float:
    """``(R - R_min) / (R_max - R_min)``, unclamped."""
    constants = load_constants() if constants is None else constants
    try:
        r_min, r_max = constants[env]
    except KeyError:
        raise KeyError(f"no normalisation constants for env {env!r}") from None
    return (R - r_min) / (r_max - r_min)


def _pooled(scores) -> np.ndarray:
    if isinstance(scores, Mapping):
        return np.concatenate([np.asarray(v, dtype=np.float64).ravel() for v in scores.values()])
    return np.asarray(scores, dtype=np.float64).ravel()


def iqm(scores, pooled: bool = True) -> float:
    """Interquartile mean: drop ``floor(n/4)`` values from each end and average the rest.

    A mapping is pooled over all (env, run) cells; with ``pooled=False`` each
    env is first reduced to its mean run score.
    """
    if isinstance(scores, Mapping) and not pooled:
        x = np.array([np.mean(v) for v in scores.values()], dtype=np.float64)
    else:
        x = _pooled(scores)
    if x.size == 0:
        raise ValueError("iqm of an empty sequence")
    x = np.sort(x)
    k = x.size // 4
    return float(x[k:x.size - k].mean())


def _check_matrix(matrix: ScoreMatrix) -> None:
    if not matrix:
        raise ValueError("empty score matrix")
    for env, runs in matrix.items():
        runs = np.asarray(runs, dtype=np.float64)
        if runs.size == 0:
            raise ValueError(f"env {env!r} has no runs")
        if not np.all(np.isfinite(runs)):
            raise ValueError(f"env {env!r} has non-finite scores")


def percentile_interval(values: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    alpha = (1.0 - level) / 2
    lo, hi = np.percentile(np.asarray(values, dtype=np.float64), [100 * alpha, 100 * (1 - alpha)])
    return float(lo), float(hi)


def stratified_bootstrap_ci(matrix: ScoreMatrix, statistic: Statistic = iqm, n_resamples: int = 2000,
                            level: float = 0.95, rng: Optional[np.random.Generator] = None) -> tuple[float, float]:
    """Percentile interval of ``statistic`` with runs resampled independently inside each env.

    An env with a single run resamples to itself.
    """
    _check_matrix(matrix)
    if n_resamples < 1000:
        raise ValueError(f"n_resamples must be at least 1000, got {n_resamples}")
    rng = rng if rng is not None else np.random.default_rng(0)
    arrays = {env: np.asarray(v, dtype=np.float64) for env, v in matrix.items()}
    stats = np.empty(n_resamples)
    for b in range(n_resamples):
        sample = {env: a[rng.integers(a.size, size=a.size)] for env, a in arrays.items()}
        stats[b] = statistic(sample)
    return percentile_interval(stats, level)


def _pair_score(x: np.ndarray, y: np.ndarray) -> float:
    diff = x[:, None] - y[None, :]
    return float(((diff > 0) + 0.5 * (diff == 0)).mean())


def probability_of_improvement_point(X: ScoreMatrix, Y: ScoreMatrix) -> float:
    if set(X) != set(Y):
        raise ValueError(f"env sets differ: {sorted(set(X) ^ set(Y))}")
    return float(np.mean([_pair_score(np.asarray(X[e], float), np.asarray(Y[e], float)) for e in sorted(X)]))


def probability_of_improvement(X: ScoreMatrix, Y: ScoreMatrix, n_resamples: int = 2000, level: float = 0.95,
                               rng: Optional[np.random.Generator] = None) -> tuple[float, tuple[float, float]]:
    """P(a run of X beats a run of Y in an average env), ties counted as half.

    The interval resamples X and Y runs independently within each env.
    """
    point = probability_of_improvement_point(X, Y)
    _check_matrix(X)
    _check_matrix(Y)
    if n_resamples < 1000:
        raise ValueError(f"n_resamples must be at least 1000, got {n_resamples}")
    rng = rng if rng is not None else np.random.default_rng(0)
    envs = sorted(X)
    xs = [np.asarray(X[e], float) for e in envs]
    ys = [np.asarray(Y[e], float) for e in envs]
    stats = np.empty(n_resamples)
    for b in range(n_resamples):
        vals = []
        for x, y in zip(xs, ys):
            vals.append(_pair_score(x[rng.integers(x.size, size=x.size)], y[rng.integers(y.size, size=y.size)]))
        stats[b] = np.mean(vals)
    return point, percentile_interval(stats, level)
