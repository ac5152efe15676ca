"""Proximal Policy Optimization with generalized advantage estimation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .numkit import AdamState, adam_step, clip_grad_norm
from .policy import CATEGORICAL, PolicyNet


@dataclass
class PpoConfig:
    clip: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01  # signed: negative penalizes entropy
    epochs: int = 4
    minibatch: int = 256
    lr: float = 3e-4
    gamma: float = 0.99
    lam: float = 0.95
    steps: int = 2048
    max_grad_norm: float = 0.5

    def __post_init__(self) -> None:
        if self.clip <= 0:
            raise ValueError("PPO clip epsilon must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.steps < 1 or self.minibatch < 1 or self.epochs < 1:
            raise ValueError("steps, minibatch and epochs must be positive")


@dataclass
class Rollout:
    """Raw time-major collection from ``n_envs`` parallel streams, shape (T, E, ...)."""

    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    bootstrap_value: np.ndarray
    episode_returns: list[float] = field(default_factory=list)
    info: dict = field(default_factory=dict)  # scalars merged into iteration metrics
    extras: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return int(self.rewards.size)


@dataclass
class RolloutBatch:
    obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    rewards: np.ndarray
    values_old: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    gamma: float
    lam: float

    def __len__(self) -> int:
        return len(self.rewards)

    def subset(self, idx: np.ndarray) -> "RolloutBatch":
        return RolloutBatch(
            self.obs[idx], self.actions[idx], self.logp_old[idx], self.rewards[idx],
            self.values_old[idx], self.dones[idx], self.advantages[idx], self.returns[idx],
            self.gamma, self.lam,
        )


class RolloutSource(Protocol):
    def collect(self, net: PolicyNet, n_steps: int, rng: np.random.Generator) -> Rollout: ...


def compute_gae(rewards, values, dones, bootstrap_value, gamma: float, lam: float):
    """Reverse GAE recursion along axis 0.

    ``dones[t]`` marks that the episode ended after step t, so neither the
    TD target nor the advantage trace crosses it.  Trailing axes are
    independent streams.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    notdone = 1.0 - np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    last = np.zeros(rewards.shape[1:])
    for t in reversed(range(T)):
        delta = rewards[t] + gamma * notdone[t] * next_value - values[t]
        last = delta + gamma * lam * notdone[t] * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def make_batch(roll: Rollout, gamma: float, lam: float) -> RolloutBatch:
    adv, ret = compute_gae(roll.rewards, roll.values, roll.dones, roll.bootstrap_value, gamma, lam)
    n = roll.rewards.size
    flat = lambda a: a.reshape((n,) + a.shape[2:])  # noqa: E731
    return RolloutBatch(
        obs=flat(roll.obs), actions=flat(roll.actions), logp_old=flat(roll.logp),
        rewards=flat(roll.rewards), values_old=flat(roll.values), dones=flat(roll.dones),
        advantages=flat(adv), returns=flat(ret), gamma=gamma, lam=lam,
    )


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    if std < 1e-8:
        return adv
    return (adv - adv.mean()) / std


def ppo_loss(batch: RolloutBatch, net: PolicyNet, cfg: PpoConfig):
    """Clipped-surrogate loss and its exact gradient w.r.t. ``net.parameters()``.

    Returns ``(loss, grads, info)``.
    """
    n = len(batch)
    A = normalize_advantages(batch.advantages)
    out = net.forward(batch.obs)
    logp, ent = net.dist_logp_entropy(out, batch.actions)
    ratio = np.exp(logp - batch.logp_old)
    clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    surr1 = ratio * A
    surr2 = clipped * A
    policy_loss = -np.minimum(surr1, surr2).mean()
    v_err = out.value - batch.returns
    value_loss = (v_err ** 2).mean()
    entropy = ent.mean()
    loss = policy_loss + cfg.vf_coef * value_loss - cfg.ent_coef * entropy
    if not math.isfinite(loss):
        raise FloatingPointError(
            f"non-finite PPO loss: policy={policy_loss} value={value_loss} entropy={entropy} "
            f"max|ratio|={np.max(np.abs(ratio))} n={n}"
        )

    active = surr1 <= surr2
    d_logp = np.where(active, -ratio * A, 0.0) / n
    d_value = 2.0 * cfg.vf_coef * v_err / n
    d_ent = -cfg.ent_coef / n
    d_log_std = None
    if net.kind == CATEGORICAL:
        p = out.probs
        onehot = np.zeros_like(p)
        onehot[np.arange(n), batch.actions.astype(np.int64)] = 1.0
        d_head = d_logp[:, None] * (onehot - p)
        # dH/dz_j = -p_j (log p_j + H)
        d_head += d_ent * (-p * (out.logp_all + ent[:, None]))
    else:
        inv_var = np.exp(-2.0 * net.log_std)
        diff = batch.actions - out.head
        d_head = d_logp[:, None] * diff * inv_var
        d_log_std = (d_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0) + d_ent * n
    grads = net.backward(out, d_head, d_value, d_log_std)
    info = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > cfg.clip)),
        "approx_kl": float(np.mean(batch.logp_old - logp)),
    }
    return float(loss), grads, info


def train_iteration(
    source: RolloutSource,
    net: PolicyNet,
    adam: AdamState,
    cfg: PpoConfig,
    rng: np.random.Generator,
):
    """Collect ``cfg.steps`` transitions, then run ``cfg.epochs`` of minibatch
    Adam updates.  Returns ``(net, adam, metrics)``."""
    roll = source.collect(net, cfg.steps, rng)
    batch = make_batch(roll, cfg.gamma, cfg.lam)
    n = len(batch)
    mb = min(cfg.minibatch, n)
    sums = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_frac": 0.0, "approx_kl": 0.0}
    count = 0
    params = net.parameters()
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, mb):
            idx = perm[start:start + mb]
            _, grads, info = ppo_loss(batch.subset(idx), net, cfg)
            grads, _ = clip_grad_norm(grads, cfg.max_grad_norm)
            params, adam = adam_step(params, grads, adam)
            net = net.with_parameters(params)
            for k in sums:
                sums[k] += info[k]
            count += 1
    metrics = {k: v / count for k, v in sums.items()}
    rets = roll.episode_returns
    metrics["mean_ep_reward"] = float(np.mean(rets)) if rets else float("nan")
    metrics["episodes"] = len(rets)
    metrics["env_steps"] = roll.n_steps
    metrics.update(roll.info)
    return net, adam, metrics


METRIC_COLUMNS = ("iteration", "env_steps", "mean_ep_reward", "policy_loss", "value_loss", "entropy")


class PpoTrainer:
    """Owns a learner, its Adam state and the running step count."""

    def __init__(self, net: PolicyNet, cfg: PpoConfig, metrics_path: str | Path | None = None):
        self.net = net
        self.cfg = cfg
        self.adam = AdamState.fresh(net.parameters(), lr=cfg.lr)
        self.iteration = 0
        self.env_steps = 0
        self.history: list[dict] = []
        self.metrics_path = Path(metrics_path) if metrics_path else None
        if self.metrics_path is not None:
            with open(self.metrics_path, "w", newline="") as fh:
                csv.writer(fh).writerow(METRIC_COLUMNS)

    def step(self, source: RolloutSource, rng: np.random.Generator) -> dict:
        self.net, self.adam, m = train_iteration(source, self.net, self.adam, self.cfg, rng)
        self.iteration += 1
        self.env_steps += m["env_steps"]
        m = dict(m, iteration=self.iteration, env_steps=self.env_steps)
        self.history.append(m)
        if self.metrics_path is not None:
            with open(self.metrics_path, "a", newline="") as fh:
                csv.writer(fh).writerow([fmt(m[c]) for c in METRIC_COLUMNS])
        return m


def fmt(x) -> str:
    """Round-trip-exact text for CSV cells."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))
