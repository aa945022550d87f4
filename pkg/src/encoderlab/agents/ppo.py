"""PPO with a shared encoder: GAE, the clipped surrogate loss and the training loop."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..autodiff import functional as F
from ..autodiff.optim import adam_step, clip_grad_global_norm, zero_grad
from ..autodiff.tensor import NonFiniteError, Tensor, no_grad
from ..encoders import ActorCritic
from ..envs.base import to_float
from ..envs.vector import VectorEnv
from .config import TrainConfig
from .runlog import RunLog


def compute_gae(rewards, values, dones, last_value, gamma: float, lam: float):
    """Backward GAE recursion over a (T, N) or (T,) rollout.

    ``dones[t]`` marks that the episode ended at step t, so the bootstrap from
    ``values[t + 1]`` (or ``last_value``) is cut.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0])
    for t in reversed(range(T)):
        next_value = np.asarray(last_value, dtype=np.float64) if t == T - 1 else values[t + 1]
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + values


def ppo_loss(batch: dict, new_log_probs: Tensor, new_values: Tensor, entropy: Tensor,
             clip_eps: float = 0.2, vf_coef: float = 0.5, ent_coef: float = 0.01,
             norm_adv: bool = True, clip_vloss: bool = False) -> tuple[Tensor, dict]:
    """Clipped surrogate plus value and entropy terms, as a scalar to minimise.

    ``batch`` holds numpy arrays ``log_probs``, ``advantages``, ``returns``
    and ``values`` from the rollout.
    """
    adv = np.asarray(batch["advantages"], dtype=np.float32)
    if norm_adv and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    old_lp = np.asarray(batch["log_probs"], dtype=np.float32)
    log_ratio = F.sub(new_log_probs, old_lp)
    ratio = F.exp(log_ratio)
    if not np.all(np.isfinite(ratio.data)):
        finite = np.isfinite(ratio.data)
        worst = float(np.abs(log_ratio.data[finite]).max()) if finite.any() else float("nan")
        raise NonFiniteError(f"PPO ratio has {int((~finite).sum())} non-finite entries; "
                             f"max finite |log ratio| {worst:.3g}")
    surr1 = F.mul(ratio, adv)
    surr2 = F.mul(F.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), adv)
    policy_term = F.mean(F.minimum(surr1, surr2))

    returns = np.asarray(batch["returns"], dtype=np.float32)
    if clip_vloss:
        old_v = np.asarray(batch["values"], dtype=np.float32)
        clipped = F.add(F.clip(F.sub(new_values, old_v), -clip_eps, clip_eps), old_v)
        value_loss = F.mean(F.maximum(F.square(F.sub(new_values, returns)),
                                      F.square(F.sub(clipped, returns))))
    else:
        value_loss = F.mean(F.square(F.sub(new_values, returns)))
    ent = F.mean(entropy)
    loss = F.add(F.sub(F.mul(value_loss, vf_coef), policy_term), F.mul(ent, -ent_coef))

    with np.errstate(all="ignore"):
        approx_kl = float(((ratio.data - 1) - log_ratio.data).mean())
        clipfrac = float((np.abs(ratio.data - 1) > clip_eps).mean())
    diag = dict(loss=float(loss.data), policy=float(policy_term.data), value=float(value_loss.data),
                entropy=float(ent.data), approx_kl=approx_kl, clipfrac=clipfrac)
    return loss, diag


def policy_step(net: ActorCritic, obs_u8: np.ndarray, rng: np.random.Generator):
    """Sample actions for a batch of uint8 frames; returns (actions, log_probs, values)."""
    with no_grad():
        logits, value = net(Tensor(to_float(obs_u8)))
        dist = F.Categorical(logits)
        actions = dist.sample(rng)
        log_probs = dist.log_prob(actions).data
    return actions, log_probs, value.data


EvalFn = Callable[[ActorCritic, int], list[dict]]


def ppo_train(venv: VectorEnv, net: ActorCritic, cfg: TrainConfig, log: Optional[RunLog] = None,
              evaluate: Optional[EvalFn] = None, on_update: Optional[Callable[[int], None]] = None) -> RunLog:
    """Run PPO for ``cfg.total_steps`` environment steps.

    ``evaluate(net, step)`` is called every ``cfg.eval_every`` steps and once at
    the end; it returns records that are appended to the log.
    """
    log = log if log is not None else RunLog()
    rng = np.random.default_rng([cfg.seed, 0x990])
    params = net.parameters()
    N, T = venv.n, cfg.rollout_len
    per_rollout = N * T
    n_updates = max(cfg.total_steps // per_rollout, 1)

    obs = venv.reset()
    obs_buf = np.zeros((T,) + obs.shape, dtype=np.uint8)
    act_buf = np.zeros((T, N), dtype=np.int64)
    lp_buf = np.zeros((T, N), dtype=np.float32)
    val_buf = np.zeros((T, N), dtype=np.float32)
    rew_buf = np.zeros((T, N), dtype=np.float32)
    done_buf = np.zeros((T, N), dtype=np.float32)

    step = 0
    next_eval = cfg.eval_every
    for update in range(n_updates):
        lr = cfg.lr * (1.0 - update / n_updates) if cfg.lr_anneal else cfg.lr
        episode_returns = []
        for t in range(T):
            actions, log_probs, values = policy_step(net, obs, rng)
            obs_buf[t], act_buf[t], lp_buf[t], val_buf[t] = obs, actions, log_probs, values
            obs, rewards, dones, infos = venv.step(actions)
            rew_buf[t], done_buf[t] = rewards, dones
            episode_returns += [info["episode_return"] for info in infos if "episode_return" in info]
        step += per_rollout
        with no_grad():
            _, last_value = net(Tensor(to_float(obs)))
        adv, ret = compute_gae(rew_buf, val_buf, done_buf, last_value.data, cfg.gamma, cfg.gae_lambda)

        flat = dict(obs=obs_buf.reshape((per_rollout,) + obs.shape[1:]), actions=act_buf.reshape(-1),
                    log_probs=lp_buf.reshape(-1), values=val_buf.reshape(-1),
                    advantages=adv.reshape(-1).astype(np.float32), returns=ret.reshape(-1).astype(np.float32))
        diags = []
        for _ in range(cfg.epochs):
            order = rng.permutation(per_rollout)
            for start in range(0, per_rollout, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                mb = {k: v[idx] for k, v in flat.items()}
                logits, values = net(Tensor(to_float(mb["obs"])))
                dist = F.Categorical(logits)
                loss, diag = ppo_loss(mb, dist.log_prob(mb["actions"]), values, dist.entropy(),
                                      cfg.clip_eps, cfg.vf_coef, cfg.ent_coef, cfg.norm_adv, cfg.clip_vloss)
                zero_grad(params)
                loss.backward()
                diag["grad_norm"] = clip_grad_global_norm(params, cfg.max_grad_norm)
                adam_step(params, lr)
                diags.append(diag)

        summary = {k: float(np.mean([d[k] for d in diags])) for k in diags[0]}
        log.write(dict(t=step, kind="train", env=venv.name, seed=cfg.seed, split="train",
                       episodes=len(episode_returns),
                       **{"return": float(np.mean(episode_returns)) if episode_returns else None},
                       lr=lr, **summary))
        if on_update is not None:
            on_update(step)
        if evaluate is not None and (step >= next_eval or update == n_updates - 1):
            for record in evaluate(net, step):
                log.write(record)
            while next_eval <= step:
                next_eval += cfg.eval_every
    return log
