"""Shoal: eat the small fish, avoid the big ones.

The agent swims freely over a fixed 64x64 arena, so entities appear anywhere
in the frame. Eight food fish are on screen at a time and each one eaten is
replaced until ten have been eaten in total; touching a predator ends the
episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import ACTIONS, SIZE, Game, Sprite, boxes_overlap, level_rng, smooth_background

AGENT_SIZE = 8
FOOD_SIZE = 6
PREDATOR_SIZE = 10
AGENT_SPEED = 3
FOOD_BUDGET = 10
FOOD_ON_SCREEN = 8
PREDATORS = (1, 1)  # inclusive range per level
PREDATOR_PERIOD = 2  # predators move once every this many steps

AGENT_COLOR = (255, 220, 0)
FOOD_COLOR = (60, 255, 140)
PREDATOR_COLOR = (255, 40, 60)


@dataclass
class Fish:
    x: int
    y: int
    vx: int
    size: int
    kind: str

    def sprite(self) -> Sprite:
        color = {"agent": AGENT_COLOR, "food": FOOD_COLOR, "predator": PREDATOR_COLOR}[self.kind]
        return Sprite(self.x, self.y, self.size, self.size, color, self.kind)


@dataclass
class ShoalState:
    level_seed: int
    agent: Fish
    fish: list[Fish]
    rng: np.random.Generator
    steps: int = 0
    eaten: int = 0
    spawned: int = 0
    background_id: int = 0
    bg: np.ndarray = field(default=None, repr=False)


class Shoal(Game):
    name = "shoal"
    r_max = float(FOOD_BUDGET)

    def new_state(self, level_seed: int) -> ShoalState:
        rng = level_rng(level_seed)
        bg = smooth_background(level_rng(level_seed, 1), SIZE, SIZE, n_dots=40)
        ax, ay = (int(v) for v in rng.integers(0, SIZE - AGENT_SIZE + 1, size=2))
        state = ShoalState(level_seed, Fish(ax, ay, 0, AGENT_SIZE, "agent"), [], rng,
                           background_id=level_seed, bg=bg)
        n_pred = int(rng.integers(PREDATORS[0], PREDATORS[1] + 1))
        for _ in range(n_pred):
            state.fish.append(self._spawn(state, PREDATOR_SIZE, "predator", min_dist=24))
        for _ in range(FOOD_ON_SCREEN):
            state.fish.append(self._spawn(state, FOOD_SIZE, "food", min_dist=8))
            state.spawned += 1
        return state

    def _spawn(self, state: ShoalState, size: int, kind: str, min_dist: float) -> Fish:
        rng = state.rng
        ax, ay = state.agent.x + AGENT_SIZE / 2, state.agent.y + AGENT_SIZE / 2
        for _ in range(100):
            x, y = (int(v) for v in rng.integers(0, SIZE - size + 1, size=2))
            if np.hypot(x + size / 2 - ax, y + size / 2 - ay) >= min_dist:
                break
        speed = 1 if kind == "predator" else int(rng.integers(0, 2))
        vx = speed * (1 if rng.random() < 0.5 else -1)
        return Fish(x, y, vx, size, kind)

    def advance(self, state: ShoalState, action: int):
        dx, dy = ACTIONS[action]
        a = state.agent
        a.x = int(np.clip(a.x + AGENT_SPEED * dx, 0, SIZE - a.size))
        a.y = int(np.clip(a.y + AGENT_SPEED * dy, 0, SIZE - a.size))
        # food drifts every other step, predators every PREDATOR_PERIOD; both bounce off the walls
        for f in state.fish:
            period = 2 if f.kind == "food" else PREDATOR_PERIOD
            if state.steps % period:
                continue
            nx = f.x + f.vx
            if nx < 0 or nx > SIZE - f.size:
                f.vx = -f.vx
                nx = f.x + f.vx
            f.x = nx
        agent_box = a.sprite()
        reward = 0.0
        info: dict = {}
        survivors = []
        for f in state.fish:
            if f.kind == "food" and boxes_overlap(agent_box, f.sprite()):
                reward += 1.0
                state.eaten += 1
            else:
                survivors.append(f)
        for _ in range(len(state.fish) - len(survivors)):
            if state.spawned < FOOD_BUDGET:
                survivors.append(self._spawn(state, FOOD_SIZE, "food", min_dist=8))
                state.spawned += 1
        state.fish = survivors
        done = False
        if any(f.kind == "predator" and boxes_overlap(agent_box, f.sprite()) for f in state.fish):
            done = True
            info["eaten_by_predator"] = True
        if state.eaten >= FOOD_BUDGET:
            done = True
            info["cleared"] = True
        return reward, done, info

    def background(self, state: ShoalState) -> np.ndarray:
        return state.bg.copy()

    def sprites(self, state: ShoalState) -> list[Sprite]:
        out = [f.sprite() for f in state.fish if f.kind == "food"]
        out += [f.sprite() for f in state.fish if f.kind == "predator"]
        out.append(state.agent.sprite())
        return out
