"""Training hyperparameters. Defaults are the full-scale PPO/DQN settings."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import ClassVar, Optional


@dataclass
class TrainConfig:
    algo: str = "ppo"
    total_steps: int = 200_000
    seed: int = 0
    lr: Optional[float] = None  # None -> the algorithm default below
    gamma: float = 0.99
    max_grad_norm: Optional[float] = None
    lr_anneal: bool = False

    # PPO
    num_envs: Optional[int] = None
    rollout_len: int = 256
    batch_size: Optional[int] = None
    epochs: int = 3
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    norm_adv: bool = True
    clip_vloss: bool = False

    # DQN
    buffer_size: int = 1_000_000
    target_update: int = 64_000
    learning_starts: int = 250_000
    train_freq: int = 1
    eps_start: float = 1.0
    eps_end: float = 0.025
    eps_fraction: float = 0.1
    n_step: int = 3
    per_alpha: float = 0.6
    per_beta0: float = 0.4
    per_eps: float = 1e-6
    huber: bool = True

    # evaluation
    eval_every: int = 10_000
    eval_episodes: int = 100

    _ALGO_DEFAULTS: ClassVar[dict] = {
        "ppo": dict(lr=3.5e-4, num_envs=64, batch_size=2048, max_grad_norm=0.5),
        "dqn": dict(lr=1e-4, num_envs=128, batch_size=512, max_grad_norm=10.0),
    }

    def __post_init__(self):
        self.algo = self.algo.lower()
        if self.algo not in self._ALGO_DEFAULTS:
            raise ValueError(f"algo must be 'ppo' or 'dqn', got {self.algo!r}")
        for key, value in self._ALGO_DEFAULTS[self.algo].items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        self.validate()

    def validate(self) -> None:
        positive = ["total_steps", "num_envs", "batch_size", "epochs", "rollout_len", "n_step",
                    "train_freq", "target_update", "buffer_size", "eval_episodes"]
        for key in positive:
            if getattr(self, key) <= 0:
                raise ValueError(f"{key} must be positive, got {getattr(self, key)}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.algo == "ppo" and (self.num_envs * self.rollout_len) % self.batch_size:
            raise ValueError(f"rollout of {self.num_envs}x{self.rollout_len} steps does not split "
                             f"into minibatches of {self.batch_size}")

    @classmethod
    def fields(cls) -> dict[str, type]:
        return {f.name: f.type for f in dataclasses.fields(cls) if not f.name.startswith("_")}

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.fields()}
