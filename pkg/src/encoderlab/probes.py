"""Translation-sensitivity maps and dormant-neuron fractions."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .autodiff.tensor import NonFiniteError, Tensor, no_grad
from .envs.analysis import Policy, sample_analysis_states
from .envs.base import MAX_SHIFT, Game
from .envs.frames import write_pgm
from .envs.levels import LevelSet

DORMANT_TAU = 0.025

LogitsFn = Callable[[np.ndarray], np.ndarray]


def logits_fn(net) -> LogitsFn:
    """Batch of frames (uint8 or float in [0, 1]) -> policy logits as numpy."""
    def fn(obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs)
        x = obs.astype(np.float32) / 255 if obs.dtype == np.uint8 else obs.astype(np.float32)
        if x.ndim == 3:
            x = x[None]
        with no_grad():
            out = net(Tensor(x))
        logits = out[0] if isinstance(out, tuple) else out
        return logits.data
    return fn


def _probs(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("non-finite policy logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sensitivity_score(actor, x_orig: np.ndarray, x_trans: np.ndarray) -> float:
    """L1 distance between the action distributions for two frames.

    ``actor`` is a network or a function from a frame batch to logits.
    """
    x_orig, x_trans = np.asarray(x_orig), np.asarray(x_trans)
    if x_orig.shape != x_trans.shape:
        raise ValueError(f"frame shapes differ: {x_orig.shape} vs {x_trans.shape}")
    fn = actor if _is_logits_fn(actor) else logits_fn(actor)
    p = _probs(fn(x_orig[None] if x_orig.ndim == 3 else x_orig))
    q = _probs(fn(x_trans[None] if x_trans.ndim == 3 else x_trans))
    return float(np.abs(p - q).sum())


def _is_logits_fn(actor) -> bool:
    return callable(actor) and not hasattr(actor, "parameters")


@dataclass
class SensitivityMap:
    """Mean score per shift; ``grid[dx + M, dy + M]``, with dy positive meaning up."""

    max_shift: int
    grid: np.ndarray
    sample_count: int

    def at(self, dx: int, dy: int) -> float:
        return float(self.grid[dx + self.max_shift, dy + self.max_shift])

    @property
    def mean(self) -> float:
        return float(self.grid.mean())

    def to_csv(self) -> str:
        M = self.max_shift
        lines = ["dx,dy,score"]
        for dx in range(-M, M + 1):
            for dy in range(-M, M + 1):
                lines.append(f"{dx},{dy},{self.at(dx, dy):.8g}")
        return "\n".join(lines) + "\n"

    def to_image(self) -> np.ndarray:
        """uint8 heatmap, 0 -> 0 and 2 -> 255; rows run from dy = +M down to -M."""
        img = np.clip(self.grid.T[::-1] / 2.0, 0.0, 1.0) * 255
        return np.rint(img).astype(np.uint8)

    def save(self, stem) -> None:
        stem = Path(stem)
        stem.with_suffix(".csv").write_text(self.to_csv())
        write_pgm(stem.with_suffix(".pgm"), self.to_image())


def sensitivity_map(actor, game: Game, n_states: int = 64, max_shift: int = MAX_SHIFT,
                    rng: Optional[np.random.Generator] = None, policy: Optional[Policy] = None,
                    levels: Optional[LevelSet] = None) -> SensitivityMap:
    """Average sensitivity over ``n_states`` frames, each from its own episode, for every shift."""
    if not 0 <= max_shift <= MAX_SHIFT:
        raise ValueError(f"max_shift must lie in [0, {MAX_SHIFT}], got {max_shift}")
    M = max_shift
    rng = rng if rng is not None else np.random.default_rng(0)
    fn = actor if _is_logits_fn(actor) else logits_fn(actor)
    shifts = [(dx, dy) for dx in range(-M, M + 1) for dy in range(-M, M + 1)]
    total = np.zeros((2 * M + 1, 2 * M + 1))
    states = sample_analysis_states(game, policy, n_states, rng, levels)
    for state in states:
        frames = np.stack([game.render_translated(state, dx, dy) for dx, dy in shifts])
        probs = _probs(fn(frames))
        centre = probs[shifts.index((0, 0))]
        scores = np.abs(probs - centre).sum(axis=-1)
        for (dx, dy), s in zip(shifts, scores):
            total[dx + M, dy + M] += s
    grid = total / max(len(states), 1)
    grid[M, M] = 0.0
    return SensitivityMap(M, grid, len(states))


@dataclass
class LayerDormancy:
    name: str
    neurons: int
    dormant: int

    @property
    def fraction(self) -> float:
        return self.dormant / self.neurons


@dataclass
class DormantReport:
    tau: float
    layers: list[LayerDormancy] = field(default_factory=list)

    @property
    def total_fraction(self) -> float:
        n = sum(layer.neurons for layer in self.layers)
        return sum(layer.dormant for layer in self.layers) / n if n else 0.0

    def as_record(self) -> dict:
        return dict(tau=self.tau, total_fraction=self.total_fraction,
                    layers={layer.name: layer.fraction for layer in self.layers})


def neuron_scores(activation: np.ndarray) -> np.ndarray:
    """Per-unit mean |h| normalised by the layer average; channels are the units of conv maps.

    A layer whose units are all zero scores 0 everywhere.
    """
    a = np.abs(np.asarray(activation, dtype=np.float64))
    axes = (0,) + tuple(range(2, a.ndim))
    per_unit = a.mean(axis=axes)
    denom = per_unit.mean()
    if denom == 0:
        return np.zeros_like(per_unit)
    return per_unit / denom


def dormant_fractions(network, probe_batch: np.ndarray, tau: float = DORMANT_TAU) -> DormantReport:
    """Fraction of units with score at most ``tau`` in every ReLU output of ``network``."""
    probe_batch = np.asarray(probe_batch)
    if probe_batch.shape[0] == 0:
        raise ValueError("probe batch is empty")
    x = probe_batch.astype(np.float32) / 255 if probe_batch.dtype == np.uint8 else probe_batch.astype(np.float32)
    taps: dict = {}
    with no_grad():
        network(Tensor(x), taps)
    report = DormantReport(tau)
    for name, act in taps.items():
        scores = neuron_scores(act)
        report.layers.append(LayerDormancy(name, scores.size, int((scores <= tau).sum())))
    return report
