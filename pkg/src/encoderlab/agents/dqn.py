"""Double DQN with n-step returns and proportional prioritized replay."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..autodiff import functional as F
from ..autodiff.optim import adam_step, clip_grad_global_norm, zero_grad
from ..autodiff.tensor import Tensor, no_grad
from ..encoders import QNetwork
from ..envs.base import to_float
from ..envs.vector import VectorEnv
from .config import TrainConfig
from .replay import NStepAccumulator, PrioritizedReplay
from .runlog import RunLog


def epsilon_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear decay from ``eps_start`` to ``eps_end`` over the first ``eps_fraction`` of training."""
    span = cfg.eps_fraction * total_steps
    if span <= 0 or step >= span:
        return cfg.eps_end
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * step / span


def double_q_target(rewards, dones, discounts, q_next_online: np.ndarray, q_next_target: np.ndarray) -> np.ndarray:
    """``r + gamma**k * (1 - done) * Q_target(s', argmax_a Q_online(s', a))``."""
    greedy = q_next_online.argmax(axis=-1)
    bootstrap = np.take_along_axis(q_next_target, greedy[:, None], axis=-1)[:, 0]
    return (np.asarray(rewards) + np.asarray(discounts) * (1.0 - np.asarray(dones)) * bootstrap).astype(np.float32)


def copy_params(src, dst) -> None:
    dst.load_state_dict({k: v.copy() for k, v in src.state_dict().items()})


def dqn_update(buffer: PrioritizedReplay, online: QNetwork, target: QNetwork, cfg: TrainConfig,
               rng: np.random.Generator, beta: float, lr: Optional[float] = None) -> dict:
    """One gradient step on a prioritized minibatch; returns loss diagnostics."""
    idx, weights = buffer.sample(cfg.batch_size, rng, beta)
    obs = to_float(buffer.obs[idx])
    next_obs = to_float(buffer.next_obs[idx])
    with no_grad():
        q_next_online = online(Tensor(next_obs)).data
        q_next_target = target(Tensor(next_obs)).data
    y = double_q_target(buffer.returns[idx], buffer.dones[idx], buffer.discounts[idx],
                        q_next_online, q_next_target)
    q = F.gather(online(Tensor(obs)), buffer.actions[idx])
    td = F.sub(q, y)
    per_item = F.huber(td, 1.0) if cfg.huber else F.square(td)
    loss = F.mean(F.mul(per_item, weights))
    params = online.parameters()
    zero_grad(params)
    loss.backward()
    grad_norm = clip_grad_global_norm(params, cfg.max_grad_norm)
    adam_step(params, cfg.lr if lr is None else lr)
    buffer.update_priorities(idx, np.abs(td.data))
    return dict(loss=float(loss.data), q_mean=float(q.data.mean()), td_abs=float(np.abs(td.data).mean()),
                grad_norm=grad_norm)


EvalFn = Callable[[QNetwork, int], list[dict]]


def dqn_train(venv: VectorEnv, online: QNetwork, cfg: TrainConfig, log: Optional[RunLog] = None,
              evaluate: Optional[EvalFn] = None) -> RunLog:
    log = log if log is not None else RunLog()
    rng = np.random.default_rng([cfg.seed, 0xD09])
    target = QNetwork(online.spec, online.num_actions, seed=cfg.seed)
    copy_params(online, target)
    obs = venv.reset()
    buffer = PrioritizedReplay(cfg.buffer_size, obs.shape[1:], cfg.per_alpha, cfg.per_eps)
    accumulators = [NStepAccumulator(cfg.n_step, cfg.gamma) for _ in range(venv.n)]
    step, next_eval, next_target, next_log = 0, cfg.eval_every, cfg.target_update, cfg.eval_every
    episode_returns, diags = [], []
    iteration = 0
    while step < cfg.total_steps:
        eps = epsilon_at(step, cfg.total_steps, cfg)
        with no_grad():
            greedy = online(Tensor(to_float(obs))).data.argmax(axis=-1)
        explore = rng.random(venv.n) < eps
        actions = np.where(explore, rng.integers(venv.num_actions, size=venv.n), greedy)
        next_obs, rewards, dones, infos = venv.step(actions)
        for i in range(venv.n):
            true_next = infos[i].get("terminal_obs", next_obs[i])
            for item in accumulators[i].push(obs[i], actions[i], rewards[i], true_next, dones[i]):
                buffer.add(*item)
            if "episode_return" in infos[i]:
                episode_returns.append(infos[i]["episode_return"])
        obs = next_obs
        step += venv.n
        iteration += 1
        if step >= cfg.learning_starts and iteration % cfg.train_freq == 0 and len(buffer):
            beta = cfg.per_beta0 + (1.0 - cfg.per_beta0) * min(step / cfg.total_steps, 1.0)
            lr = cfg.lr * (1.0 - step / cfg.total_steps) if cfg.lr_anneal else cfg.lr
            diags.append(dqn_update(buffer, online, target, cfg, rng, beta, lr))
        while step >= next_target:
            copy_params(online, target)
            next_target += cfg.target_update
        if step >= next_log or step >= cfg.total_steps:
            summary = {k: float(np.mean([d[k] for d in diags])) for k in diags[0]} if diags else {}
            log.write(dict(t=step, kind="train", env=venv.name, seed=cfg.seed, split="train",
                           episodes=len(episode_returns), epsilon=eps,
                           **{"return": float(np.mean(episode_returns)) if episode_returns else None},
                           **summary))
            episode_returns, diags = [], []
            while next_log <= step:
                next_log += cfg.eval_every
        if evaluate is not None and (step >= next_eval or step >= cfg.total_steps):
            for record in evaluate(online, step):
                log.write(record)
            while next_eval <= step:
                next_eval += cfg.eval_every
    return log
