"""Corridor: a side-scrolling run to a goal flag.

The camera follows the agent on both axes, so the agent is always drawn at
the same screen position and the level slides underneath it. Pits and saws
end the episode; touching the flag pays 10.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import ACTIONS, SIZE, Game, Sprite, boxes_overlap, level_rng, smooth_background

AGENT = 6
RUN_SPEED = 2
JUMP_SPEED = -5
GRAVITY = 1
MAX_FALL = 6
GROUND_Y = 80  # world y of the ground surface
WORLD_H = 128
MARGIN = SIZE  # padding around the world canvas so the camera never leaves it
SAW = 5
GOAL_W, GOAL_H = 4, 12

AGENT_COLOR = (255, 220, 0)
SAW_COLOR = (255, 40, 60)
GOAL_COLOR = (60, 255, 140)
WALL_COLOR = (30, 30, 30)


@dataclass
class CorridorState:
    level_seed: int
    length: int
    pits: list[tuple[int, int]]
    saws: list[tuple[int, int]]
    goal_x: int
    x: int
    y: int
    vy: int = 0
    steps: int = 0
    # shifts every world-anchored thing; used to check camera centring
    world_offset: int = 0
    background_id: int = 0
    canvas: np.ndarray = field(default=None, repr=False)


def _build_canvas(seed: int, length: int, pits) -> np.ndarray:
    """World image padded by MARGIN on every side: sky, ground and pits."""
    rng = level_rng(seed, 1)
    h, w = WORLD_H + 2 * MARGIN, length + 2 * MARGIN
    canvas = smooth_background(rng, h, w, n_dots=int(0.01 * h * w))
    ground = rng.integers(60, 120, size=3).astype(np.uint8)
    top = MARGIN + GROUND_Y
    canvas[:, top:, MARGIN:MARGIN + length] = ground[:, None, None]
    canvas[:, top + 2::4, MARGIN:MARGIN + length:3] //= 2
    for x0, x1 in pits:
        canvas[:, top:, MARGIN + x0:MARGIN + x1] = 10
    canvas[:, :, :MARGIN] = np.asarray(WALL_COLOR, dtype=np.uint8)[:, None, None]
    canvas[:, :, MARGIN + length:] = np.asarray(WALL_COLOR, dtype=np.uint8)[:, None, None]
    return canvas


class Corridor(Game):
    name = "corridor"
    r_max = 10.0

    def new_state(self, level_seed: int) -> CorridorState:
        rng = level_rng(level_seed)
        length = int(rng.integers(160, 257))
        pits, saws = [], []
        x = 36
        while True:
            x += int(rng.integers(18, 40))
            if x > length - 40:
                break
            if rng.random() < 0.55:
                w = int(rng.integers(8, 15))
                pits.append((x, x + w))
                x += w
            else:
                saws.append((x, GROUND_Y - SAW))
                x += SAW
        goal_x = length - 16
        canvas = _build_canvas(level_seed, length, pits)
        return CorridorState(level_seed, length, pits, saws, goal_x, x=8, y=GROUND_Y - AGENT,
                             background_id=level_seed, canvas=canvas)

    def _supported(self, s: CorridorState, x: int) -> bool:
        if x < 0 or x + AGENT > s.length:
            return False
        return not any(x0 <= x and x + AGENT <= x1 for x0, x1 in s.pits)

    def advance(self, s: CorridorState, action: int):
        dx, dy = ACTIONS[action]
        grounded = s.y == GROUND_Y - AGENT and self._supported(s, s.x)
        s.x = int(np.clip(s.x + RUN_SPEED * dx, 0, s.length - AGENT))
        if grounded and dy < 0:
            s.vy = JUMP_SPEED
        elif grounded:
            s.vy = 0
        else:
            s.vy = min(s.vy + GRAVITY, MAX_FALL)
        new_y = s.y + s.vy
        if s.y <= GROUND_Y - AGENT < new_y and self._supported(s, s.x):
            new_y = GROUND_Y - AGENT
            s.vy = 0
        elif grounded and s.vy == 0 and not self._supported(s, s.x):
            s.vy = GRAVITY
            new_y = s.y + s.vy
        s.y = new_y
        info: dict = {}
        if s.y > GROUND_Y + 10:
            info["fell"] = True
            return 0.0, True, info
        agent = Sprite(s.x, s.y, AGENT, AGENT, AGENT_COLOR, "agent")
        if any(boxes_overlap(agent, Sprite(sx, sy, SAW, SAW, SAW_COLOR, "saw")) for sx, sy in s.saws):
            info["hit_saw"] = True
            return 0.0, True, info
        if s.x + AGENT >= s.goal_x:
            info["cleared"] = True
            return 10.0, True, info
        return 0.0, False, info

    def _camera(self, s: CorridorState) -> tuple[int, int]:
        """World coordinates of the top-left screen pixel."""
        return s.x + AGENT // 2 - SIZE // 2, s.y + AGENT // 2 - SIZE // 2

    def background(self, s: CorridorState) -> np.ndarray:
        cx, cy = self._camera(s)
        # world content is anchored at world_offset, the camera at the agent
        x0 = MARGIN + cx - s.world_offset
        y0 = MARGIN + cy
        return s.canvas[:, y0:y0 + SIZE, x0:x0 + SIZE].copy()

    def sprites(self, s: CorridorState) -> list[Sprite]:
        cx, cy = self._camera(s)
        out = []
        for sx, sy in s.saws:
            out.append(Sprite(sx + s.world_offset - cx, sy - cy, SAW, SAW, SAW_COLOR, "saw"))
        out.append(Sprite(s.goal_x + s.world_offset - cx, GROUND_Y - GOAL_H - cy, GOAL_W, GOAL_H,
                          GOAL_COLOR, "goal"))
        visible = [sp for sp in out if -sp.w < sp.x < SIZE and -sp.h < sp.y < SIZE]
        visible.append(Sprite(SIZE // 2 - AGENT // 2, SIZE // 2 - AGENT // 2, AGENT, AGENT,
                              AGENT_COLOR, "agent"))
        return visible
