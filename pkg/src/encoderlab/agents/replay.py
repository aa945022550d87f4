"""Proportional prioritized replay on a sum tree, with n-step transitions."""

from __future__ import annotations

from collections import deque

import numpy as np


class SumTree:
    """Binary tree over ``capacity`` leaves; each node holds the sum of its children."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        size = 1
        while size < capacity:
            size *= 2
        self.size = size
        self.nodes = np.zeros(2 * size, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def get(self, idx) -> np.ndarray:
        return self.nodes[self.size + np.asarray(idx)]

    def set(self, idx, values) -> None:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        values = np.broadcast_to(np.asarray(values, dtype=np.float64), idx.shape)
        for i, v in zip(idx, values):
            j = self.size + int(i)
            self.nodes[j] = v
            j //= 2
            while j >= 1:
                self.nodes[j] = self.nodes[2 * j] + self.nodes[2 * j + 1]
                j //= 2

    def find(self, mass: np.ndarray) -> np.ndarray:
        """Leaf index whose prefix-sum interval contains each value of ``mass``."""
        mass = np.array(mass, dtype=np.float64, copy=True)
        j = np.ones(mass.shape, dtype=np.int64)
        for _ in range(self.size.bit_length() - 1):
            left = self.nodes[2 * j]
            go_right = mass >= left
            mass = np.where(go_right, mass - left, mass)
            j = 2 * j + go_right
        leaf = j - self.size
        # float round-off can walk into an empty leaf past the last item
        return np.minimum(leaf, self.capacity - 1)


class PrioritizedReplay:
    """Ring buffer of (obs, action, n-step return, next_obs, done, discount) items.

    Item ``i`` is drawn with probability ``p_i**alpha / sum_j p_j**alpha``; new
    items get the current maximum priority.
    """

    def __init__(self, capacity: int, obs_shape, alpha: float = 0.6, eps: float = 1e-6):
        self.capacity, self.alpha, self.eps = capacity, alpha, eps
        self.tree = SumTree(capacity)
        self.obs = np.zeros((capacity,) + tuple(obs_shape), dtype=np.uint8)
        self.next_obs = np.zeros_like(self.obs)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.returns = np.zeros(capacity, dtype=np.float32)
        self.dones = np.zeros(capacity, dtype=np.float32)
        self.discounts = np.zeros(capacity, dtype=np.float32)
        self.pos = 0
        self.count = 0
        self.max_priority = 1.0

    def __len__(self) -> int:
        return self.count

    def add(self, obs, action, ret, next_obs, done, discount) -> None:
        i = self.pos
        self.obs[i], self.actions[i], self.returns[i] = obs, action, ret
        self.next_obs[i], self.dones[i], self.discounts[i] = next_obs, done, discount
        self.tree.set(i, self.max_priority ** self.alpha)
        self.pos = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator, beta: float = 0.4):
        """Stratified proportional sample; returns (indices, importance weights)."""
        if self.count == 0:
            raise IndexError("cannot sample from an empty replay buffer")
        total = self.tree.total
        edges = np.linspace(0.0, total, batch_size + 1)
        mass = rng.uniform(edges[:-1], edges[1:])
        idx = self.tree.find(mass)
        probs = self.tree.get(idx) / total
        weights = (self.count * probs) ** (-beta)
        weights /= weights.max()
        return idx, weights.astype(np.float32)

    def sample_iid(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Independent proportional draws (used to check sampling frequencies)."""
        return self.tree.find(rng.uniform(0.0, self.tree.total, size=n))

    def update_priorities(self, idx, priorities) -> None:
        priorities = np.asarray(priorities, dtype=np.float64) + self.eps
        if not np.all(np.isfinite(priorities)):
            raise FloatingPointError("non-finite replay priority")
        self.tree.set(idx, priorities ** self.alpha)
        self.max_priority = max(self.max_priority, float(priorities.max()))


class NStepAccumulator:
    """Turns one env's 1-step stream into n-step items ``(s_t, a_t, R, s_{t+k}, done, gamma**k)``."""

    def __init__(self, n: int, gamma: float):
        self.n, self.gamma = n, gamma
        self.queue: deque = deque()

    def push(self, obs, action, reward, next_obs, done) -> list[tuple]:
        self.queue.append((obs, action, reward))
        out = []
        if done:
            while self.queue:
                out.append(self._emit(next_obs, True))
        elif len(self.queue) == self.n:
            out.append(self._emit(next_obs, False))
        return out

    def _emit(self, next_obs, done: bool) -> tuple:
        ret = 0.0
        for k, (_, _, r) in enumerate(self.queue):
            ret += self.gamma ** k * r
        obs, action, _ = self.queue.popleft()
        k = len(self.queue) + 1
        return obs, action, ret, next_obs, float(done), self.gamma ** k
