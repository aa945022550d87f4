"""Shared machinery for the 64x64 games.

A game splits each frame into a stationary background and a list of
foreground sprites. That split is what lets :meth:`Game.render_translated`
move only the agent and other characters while the background stays put.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

SIZE = 64
OBS_SHAPE = (3, SIZE, SIZE)
# (dx, dy) in image coordinates, dy pointing down: noop + 8-neighbourhood
ACTIONS = ((0, 0), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1))
NUM_ACTIONS = len(ACTIONS)
HORIZON = 200

# analysis-state constraints for translation maps
MAX_SHIFT = 8
FREE_BORDER = 10
CENTER_BOX = 22


class EpisodeDoneError(RuntimeError):
    pass


class AnalysisConstraintError(ValueError):
    pass


@dataclass
class Sprite:
    """Axis-aligned box in screen pixels."""

    x: int
    y: int
    w: int
    h: int
    color: tuple[int, int, int]
    kind: str

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2, self.y + self.h / 2


def draw(canvas: np.ndarray, s: Sprite, dx: int = 0, dy: int = 0) -> None:
    x0, y0 = s.x + dx, s.y + dy
    x1, y1 = max(x0, 0), max(y0, 0)
    x2, y2 = min(x0 + s.w, SIZE), min(y0 + s.h, SIZE)
    if x2 > x1 and y2 > y1:
        canvas[:, y1:y2, x1:x2] = np.asarray(s.color, dtype=np.uint8)[:, None, None]


def smooth_background(rng: np.random.Generator, height: int, width: int, n_dots: int) -> np.ndarray:
    """Muted two-colour gradient with sparse texture dots, as uint8 (3, H, W)."""
    c0 = rng.integers(20, 140, size=3)
    c1 = rng.integers(20, 140, size=3)
    angle = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    t = (np.cos(angle) * xx / max(width - 1, 1) + np.sin(angle) * yy / max(height - 1, 1))
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    img = (c0[:, None, None] * (1 - t) + c1[:, None, None] * t)
    ys = rng.integers(0, height, size=n_dots)
    xs = rng.integers(0, width, size=n_dots)
    shade = rng.integers(-30, 31, size=(n_dots, 3))
    for y, x, d in zip(ys, xs, shade):
        img[:, y, x] = np.clip(img[:, y, x] + d, 0, 255)
    return img.astype(np.uint8)


@dataclass
class Snapshot:
    """Frozen frame split into background and foreground, used by the probes.

    Sprites that would leave the frame under a shift are dropped when the
    snapshot is taken, so every remaining one can move by up to MAX_SHIFT.
    """

    background: np.ndarray
    foreground: list[Sprite]
    level_seed: int
    steps: int


class Game:
    """Base class: one episode at a time, ``reset(level_seed)`` then ``step(action)``."""

    name = "game"
    horizon = HORIZON
    r_max = 10.0
    num_actions = NUM_ACTIONS

    def __init__(self):
        self.state = None
        self.done = True

    # hooks -------------------------------------------------------------
    def new_state(self, level_seed: int):
        raise NotImplementedError

    def advance(self, state, action: int) -> tuple[float, bool, dict]:
        """Mutate ``state`` by one step; return (reward, done, info)."""
        raise NotImplementedError

    def background(self, state) -> np.ndarray:
        raise NotImplementedError

    def sprites(self, state) -> list[Sprite]:
        raise NotImplementedError

    # public API --------------------------------------------------------
    def reset(self, level_seed: int) -> np.ndarray:
        self.state = self.new_state(int(level_seed))
        self.done = False
        return self.render()

    def step(self, action: int):
        if self.done:
            raise EpisodeDoneError(f"{self.name}: step() after the episode ended; call reset()")
        if not 0 <= int(action) < NUM_ACTIONS:
            raise ValueError(f"{self.name}: action {action} outside 0..{NUM_ACTIONS - 1}")
        reward, done, info = self.advance(self.state, int(action))
        self.state.steps += 1
        if self.state.steps >= self.horizon and not done:
            done = True
            info["timeout"] = True
        self.done = done
        return self.render(), float(reward), bool(done), info

    def render(self, state=None) -> np.ndarray:
        return self.render_translated(state if state is not None else self.state, 0, 0, check=False)

    def render_translated(self, state, dx: int, dy: int, check: bool = True) -> np.ndarray:
        """Frame with every foreground sprite moved by ``dx`` right and ``dy`` up."""
        if isinstance(state, Snapshot):
            canvas, sprites = state.background.copy(), state.foreground
        else:
            canvas, sprites = self.background(state), self.sprites(state)
        if check:
            if abs(dx) > MAX_SHIFT or abs(dy) > MAX_SHIFT:
                raise AnalysisConstraintError(f"shift ({dx}, {dy}) exceeds +-{MAX_SHIFT}")
            problems = analysis_violations(sprites)
            if problems:
                raise AnalysisConstraintError("; ".join(problems))
        for s in sprites:
            draw(canvas, s, dx, -dy)
        return canvas

    def snapshot(self, state=None) -> Snapshot:
        """Copy of the current frame with border-intruding non-agent sprites removed."""
        state = state if state is not None else self.state
        kept = [s for s in self.sprites(state) if s.kind == "agent" or inside_border(s)]
        return Snapshot(self.background(state), kept, state.level_seed, state.steps)


def analysis_violations(sprites: list[Sprite]) -> list[str]:
    """Reasons a frame cannot be used for translation analysis (empty if usable)."""
    problems = []
    agents = [s for s in sprites if s.kind == "agent"]
    if len(agents) != 1:
        problems.append("frame must contain exactly one agent")
    else:
        cx, cy = agents[0].center
        lo, hi = (SIZE - CENTER_BOX) / 2, (SIZE + CENTER_BOX) / 2
        if not (lo <= cx < hi and lo <= cy < hi):
            problems.append(f"agent centre ({cx:.1f}, {cy:.1f}) outside the central {CENTER_BOX}px square")
    if not any(s.kind != "agent" for s in sprites):
        problems.append("agent is alone in the frame")
    for s in sprites:
        if not inside_border(s):
            problems.append(f"{s.kind} at ({s.x}, {s.y}) intrudes on the {FREE_BORDER}px free border")
            break
    return problems


def inside_border(s: Sprite) -> bool:
    return (s.x >= FREE_BORDER and s.y >= FREE_BORDER and s.x + s.w <= SIZE - FREE_BORDER
            and s.y + s.h <= SIZE - FREE_BORDER)


def boxes_overlap(a: Sprite, b: Sprite) -> bool:
    return a.x < b.x + b.w and b.x < a.x + a.w and a.y < b.y + b.h and b.y < a.y + a.h


def level_rng(level_seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(level_seed), stream])


def to_float(obs: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    """uint8 pixels -> float32 in [0, 1]."""
    return np.multiply(obs, np.float32(1 / 255), out=out, dtype=np.float32)
