"""Rollout collection over vectorized worlds, generalized advantage
estimation, and clipped-surrogate policy optimization.

Two entry points share one update core: `ppo_update` for a single-agent
buffer and `mappo_update` for a shared actor trained on all agents' pooled
transitions with a centralized critic reading the global state. Gradients are
computed analytically through the dense networks; Adam does the steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import LengthMismatch, NonFiniteLoss
from .neural import (
    AdamState,
    GaussianPolicy,
    MlpParams,
    adam_step,
    backward,
    forward,
    sample_action,
)


@dataclass(frozen=True)
class PpoConfig:
    n_envs: int = 500
    lr: float = 5e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 10
    rollout_len: int = 200
    value_coef: float = 0.5
    clip: float = 0.2
    entropy_coef: float = 0.01
    minibatches: int = 4
    critic_lr_scale: float = 1.0
    log_std_floor: float = -5.0  # training-time exploration floor (within the clamp)
    max_grad_norm: float = 0.0  # global-norm clip per minibatch; 0 disables
    target_kl: float = 0.0  # stop an update's epochs once approx KL exceeds this; 0 disables
    seed: int = 0

    def __post_init__(self):
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    gamma: float,
    lam: float,
    bootstrap_value: np.ndarray | float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over (T, ...) arrays.

    `dones[t]` marks transitions whose episode terminated at step t (no
    bootstrapping across them). `bootstrap_value` estimates the value after
    the final step. Returns (advantages, returns) with returns = adv + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise LengthMismatch(
            f"rewards {rewards.shape}, values {values.shape}, dones {dones.shape} must match"
        )
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_value = np.broadcast_to(np.asarray(bootstrap_value, dtype=np.float64), rewards.shape[1:]).copy() if rewards.ndim > 1 else float(bootstrap_value)
    gae = np.zeros(rewards.shape[1:], dtype=np.float64) if rewards.ndim > 1 else 0.0
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t].astype(np.float64) if rewards.ndim > 1 else (0.0 if dones[t] else 1.0)
        delta = rewards[t] + gamma * next_value * live - values[t]
        gae = delta + gamma * lam * live * gae
        adv[t] = gae
        next_value = values[t]
    return adv, adv + values


@dataclass
class RolloutBuffer:
    """Trajectories over (time, env, agent). Values are per env; rewards and
    actions are per agent. `dones` are shared across an env's agents."""

    obs: np.ndarray  # (T, E, N, do)
    global_state: np.ndarray  # (T, E, ds)
    actions: np.ndarray  # (T, E, N, da) raw, unclamped samples
    log_probs: np.ndarray  # (T, E, N)
    rewards: np.ndarray  # (T, E, N)
    values: np.ndarray  # (T, E)
    dones: np.ndarray  # (T, E) bool
    bootstrap_value: np.ndarray  # (E,)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episode_records: list[dict] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return self.obs.shape[0]

    @property
    def n_envs(self) -> int:
        return self.obs.shape[1]

    @property
    def n_agents(self) -> int:
        return self.obs.shape[2]

    def finalize(self, gamma: float, lam: float) -> None:
        """Compute per-agent advantages with the shared per-env value baseline."""
        T, E, N = self.rewards.shape
        values = np.repeat(self.values[:, :, None], N, axis=2)
        dones = np.repeat(self.dones[:, :, None], N, axis=2)
        boot = np.repeat(self.bootstrap_value[:, None], N, axis=1)
        self.advantages, self.returns = compute_gae(
            self.rewards, values, dones, gamma, lam, boot
        )


class VecEnvLike(Protocol):
    n_envs: int
    n_agents: int
    obs_dim: int
    state_dim: int
    act_dim: int

    def reset_all(self) -> tuple[np.ndarray, np.ndarray]: ...

    def step(
        self, actions: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, list[dict]]: ...


def collect_rollouts(
    envs: VecEnvLike,
    actor: GaussianPolicy,
    critic: MlpParams,
    length: int,
    rng: np.random.Generator,
    obs_state: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[RolloutBuffer, tuple[np.ndarray, np.ndarray]]:
    """Step every env `length` times, sampling from the shared actor.

    Finished episodes auto-reset inside the env; their summary records are
    accumulated on the buffer. Returns the buffer plus the final (obs, state)
    so collection can resume without a reset.
    """
    E, N = envs.n_envs, envs.n_agents
    do, ds, da = envs.obs_dim, envs.state_dim, envs.act_dim
    obs, state = envs.reset_all() if obs_state is None else obs_state

    buf = RolloutBuffer(
        obs=np.zeros((length, E, N, do)),
        global_state=np.zeros((length, E, ds)),
        actions=np.zeros((length, E, N, da)),
        log_probs=np.zeros((length, E, N)),
        rewards=np.zeros((length, E, N)),
        values=np.zeros((length, E)),
        dones=np.zeros((length, E), dtype=bool),
        bootstrap_value=np.zeros(E),
    )
    for t in range(length):
        sample = sample_action(actor, obs.reshape(E * N, do), rng)
        v, _ = forward(critic, state)
        buf.obs[t] = obs
        buf.global_state[t] = state
        buf.actions[t] = sample.raw.reshape(E, N, da)
        buf.log_probs[t] = sample.log_prob.reshape(E, N)
        buf.values[t] = v[:, 0]
        obs, state, rewards, dones, records = envs.step(sample.action.reshape(E, N, da))
        buf.rewards[t] = rewards
        buf.dones[t] = dones
        buf.episode_records.extend(records)
    if length > 0:
        v, _ = forward(critic, state)
        buf.bootstrap_value = v[:, 0]
    return buf, (obs, state)


@dataclass
class TrainStats:
    iteration: int = 0
    env_steps: int = 0
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    approx_kl: float = 0.0
    clip_fraction: float = 0.0
    ep_return_mean: float = float("nan")
    ep_success_rate: float = float("nan")
    n_episodes: int = 0
    eval_sr: float = float("nan")  # periodic mean-action battery (model selection)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "policy_loss": self.policy_loss,
            "value_loss": self.value_loss,
            "entropy": self.entropy,
            "approx_kl": self.approx_kl,
            "clip_fraction": self.clip_fraction,
            "ep_return_mean": self.ep_return_mean,
            "ep_success_rate": self.ep_success_rate,
            "n_episodes": self.n_episodes,
            "eval_sr": self.eval_sr,
        }


@dataclass
class Optimizers:
    """Adam state for one actor-critic pair."""

    policy: AdamState
    critic: AdamState

    @classmethod
    def create(cls, lr: float, critic_lr_scale: float = 1.0) -> "Optimizers":
        return cls(AdamState(lr=lr), AdamState(lr=lr * critic_lr_scale))


def policy_loss_and_grads(
    policy: GaussianPolicy,
    obs: np.ndarray,
    raw_actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    cfg: PpoConfig,
) -> tuple[float, float, float, float, list[np.ndarray]]:
    """Clipped surrogate plus entropy bonus.

    Returns (policy_loss, entropy, approx_kl, clip_fraction, grads) where
    grads align with policy.mean_net.flat_arrays() + [log_std].
    """
    B = obs.shape[0]
    mean, cache = forward(policy.mean_net, obs)
    std = policy.std()
    z = (raw_actions - mean) / std
    new_lp = -0.5 * (z * z).sum(axis=1) - np.clip(
        policy.log_std, -5.0, 1.0
    ).sum() - 0.5 * math.log(2 * math.pi) * mean.shape[1]
    log_ratio = new_lp - old_log_probs
    ratio = np.exp(log_ratio)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * advantages
    loss = -np.minimum(surr1, surr2).mean()
    ent = float(
        np.clip(policy.log_std, -5.0, 1.0).sum()
        + 0.5 * policy.log_std.size * (math.log(2 * math.pi) + 1.0)
    )
    total = loss - cfg.entropy_coef * ent
    if not math.isfinite(total):
        raise NonFiniteLoss(f"policy loss is {total}")

    # gradient flows through the unclipped branch (ties included)
    use_raw = (surr1 <= surr2).astype(np.float64)
    dloss_dlp = -(advantages * use_raw * ratio) / B  # (B,)
    dmean = dloss_dlp[:, None] * (z / std)  # d lp / d mean = z / std
    grads_net, _ = backward(policy.mean_net, cache, dmean)
    dlog_std = (dloss_dlp[:, None] * (z * z - 1.0)).sum(axis=0)
    dlog_std -= cfg.entropy_coef  # entropy bonus gradient
    approx_kl = float(np.mean(-log_ratio))
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > cfg.clip))
    return float(loss), ent, approx_kl, clip_frac, grads_net.flat_arrays() + [dlog_std]


def value_loss_and_grads(
    critic: MlpParams, inputs: np.ndarray, targets: np.ndarray, value_coef: float
) -> tuple[float, list[np.ndarray]]:
    """Mean squared error on value predictions, scaled by value_coef."""
    B = inputs.shape[0]
    v, cache = forward(critic, inputs)
    err = v[:, 0] - targets
    loss = float((err * err).mean())
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"value loss is {loss}")
    dv = (2.0 * value_coef / B) * err
    grads, _ = backward(critic, cache, dv[:, None])
    return loss, grads.flat_arrays()


def _clipped_update(
    policy: GaussianPolicy,
    critic: MlpParams,
    optim: Optimizers,
    actor_obs: np.ndarray,  # (M, N, do) grouped by env-step
    raw_actions: np.ndarray,  # (M, N, da)
    old_log_probs: np.ndarray,  # (M, N)
    advantages: np.ndarray,  # (M, N)
    critic_inputs: np.ndarray,  # (M, ds)
    value_targets: np.ndarray,  # (M,)
    cfg: PpoConfig,
    rng: np.random.Generator,
) -> TrainStats:
    M, N = old_log_probs.shape
    adv = advantages.astype(np.float64)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    stats: dict[str, list[float]] = {k: [] for k in ("pl", "vl", "ent", "kl", "cf")}
    stop = False
    for _ in range(cfg.epochs):
        if stop:
            break
        order = rng.permutation(M)
        splits = np.array_split(order, cfg.minibatches)
        for idx in splits:
            if idx.size == 0:
                continue
            b = idx.size
            o = actor_obs[idx].reshape(b * N, -1)
            a = raw_actions[idx].reshape(b * N, -1)
            lp = old_log_probs[idx].reshape(b * N)
            ad = adv[idx].reshape(b * N)
            pl, ent, kl, cf, pgrads = policy_loss_and_grads(policy, o, a, lp, ad, cfg)
            stats["kl"].append(kl)
            stats["cf"].append(cf)
            if cfg.target_kl > 0.0 and kl > cfg.target_kl:
                stop = True
                break
            if cfg.max_grad_norm > 0.0:
                _clip_global_norm(pgrads, cfg.max_grad_norm)
            params = policy.mean_net.flat_arrays() + [policy.log_std]
            adam_step(params, pgrads, optim.policy)
            policy.clamp_log_std()
            if cfg.log_std_floor > -5.0:
                np.clip(policy.log_std, cfg.log_std_floor, None, out=policy.log_std)

            vl, vgrads = value_loss_and_grads(
                critic, critic_inputs[idx], value_targets[idx], cfg.value_coef
            )
            if cfg.max_grad_norm > 0.0:
                _clip_global_norm(vgrads, cfg.max_grad_norm)
            adam_step(critic.flat_arrays(), vgrads, optim.critic)

            stats["pl"].append(pl)
            stats["vl"].append(vl)
            stats["ent"].append(ent)
    if not stats["pl"]:
        stats["pl"] = stats["vl"] = [0.0]
        stats["ent"] = [float(np.clip(policy.log_std, -5, 1).sum()
                              + 0.5 * policy.log_std.size * (math.log(2 * math.pi) + 1.0))]
    return TrainStats(
        policy_loss=float(np.mean(stats["pl"])),
        value_loss=float(np.mean(stats["vl"])),
        entropy=float(np.mean(stats["ent"])),
        approx_kl=float(np.mean(stats["kl"])),
        clip_fraction=float(np.mean(stats["cf"])),
    )


def _clip_global_norm(grads: list[np.ndarray], max_norm: float) -> None:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale


def _pool_buffer(buffer: RolloutBuffer):
    T, E, N = buffer.rewards.shape
    M = T * E
    actor_obs = buffer.obs.reshape(M, N, -1)
    raw_actions = buffer.actions.reshape(M, N, -1)
    old_lp = buffer.log_probs.reshape(M, N)
    adv = buffer.advantages.reshape(M, N)
    critic_in = buffer.global_state.reshape(M, -1)
    targets = buffer.returns.reshape(M, N).mean(axis=1)
    return actor_obs, raw_actions, old_lp, adv, critic_in, targets


def ppo_update(
    policy: GaussianPolicy,
    value_net: MlpParams,
    buffer: RolloutBuffer,
    cfg: PpoConfig,
    optim: Optimizers | None = None,
    rng: np.random.Generator | None = None,
) -> TrainStats:
    """Clipped-surrogate update for a single-agent buffer."""
    if buffer.n_agents != 1:
        raise LengthMismatch("ppo_update expects a single-agent buffer")
    return mappo_update(policy, value_net, buffer, cfg, optim, rng)


def mappo_update(
    shared_policy: GaussianPolicy,
    central_critic: MlpParams,
    buffer: RolloutBuffer,
    cfg: PpoConfig,
    optim: Optimizers | None = None,
    rng: np.random.Generator | None = None,
) -> TrainStats:
    """Shared-actor update on all agents' pooled transitions; the critic
    consumes the global state. With one agent this is exactly ppo_update."""
    if buffer.advantages is None:
        buffer.finalize(cfg.gamma, cfg.gae_lambda)
    if optim is None:
        optim = Optimizers.create(cfg.lr, cfg.critic_lr_scale)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    actor_obs, raw_actions, old_lp, adv, critic_in, targets = _pool_buffer(buffer)
    stats = _clipped_update(
        shared_policy,
        central_critic,
        optim,
        actor_obs,
        raw_actions,
        old_lp,
        adv,
        critic_in,
        targets,
        cfg,
        rng,
    )
    stats.env_steps = buffer.n_steps * buffer.n_envs
    recs = buffer.episode_records
    if recs:
        stats.n_episodes = len(recs)
        stats.ep_return_mean = float(np.mean([r["return"] for r in recs]))
        if all("success" in r for r in recs):
            stats.ep_success_rate = float(np.mean([r["success"] for r in recs]))
    return stats


def run_training(
    envs: VecEnvLike,
    actor: GaussianPolicy,
    critic: MlpParams,
    cfg: PpoConfig,
    total_steps: int,
    log_fn=None,
    schedule_fn=None,
    lr_final_scale: float = 1.0,
) -> list[TrainStats]:
    """Iterate collect -> GAE -> update until total_steps env steps are gathered.

    `schedule_fn(frac_done, envs)` runs before each iteration (curricula);
    `lr_final_scale` linearly anneals both Adam learning rates toward
    lr * lr_final_scale over the run (1.0 keeps them constant).
    """
    steps_per_iter = cfg.rollout_len * envs.n_envs
    n_iters = max(0, math.ceil(total_steps / steps_per_iter)) if total_steps > 0 else 0
    rng = np.random.default_rng(cfg.seed)
    optim = Optimizers.create(cfg.lr, cfg.critic_lr_scale)
    history = []
    carry = None
    done_steps = 0
    for it in range(n_iters):
        frac = it / max(1, n_iters - 1) if n_iters > 1 else 1.0
        if schedule_fn is not None:
            schedule_fn(frac, envs)
        scale = 1.0 + (lr_final_scale - 1.0) * frac
        optim.policy.lr = cfg.lr * scale
        optim.critic.lr = cfg.lr * cfg.critic_lr_scale * scale
        buf, carry = collect_rollouts(envs, actor, critic, cfg.rollout_len, rng, carry)
        buf.finalize(cfg.gamma, cfg.gae_lambda)
        stats = mappo_update(actor, critic, buf, cfg, optim, rng)
        done_steps += steps_per_iter
        stats.iteration = it
        stats.env_steps = done_steps
        history.append(stats)
        if log_fn is not None:
            log_fn(stats)
    return history
