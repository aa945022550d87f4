"""PPO and DQN training loops."""

from .config import TrainConfig
from .dqn import double_q_target, dqn_train, dqn_update, epsilon_at
from .evaluate import actor_critic_policy, episode_returns, q_policy
from .ppo import compute_gae, ppo_loss, ppo_train
from .replay import NStepAccumulator, PrioritizedReplay, SumTree
from .runlog import RunLog, read_runlog

__all__ = [
    "NStepAccumulator",
    "PrioritizedReplay",
    "RunLog",
    "SumTree",
    "TrainConfig",
    "actor_critic_policy",
    "compute_gae",
    "double_q_target",
    "dqn_train",
    "dqn_update",
    "episode_returns",
    "epsilon_at",
    "ppo_loss",
    "ppo_train",
    "q_policy",
    "read_runlog",
]
