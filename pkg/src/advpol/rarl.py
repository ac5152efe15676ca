"""Robust adversarial training on ParamRunner and the domain-shift grid study.

A target runner is trained against an ensemble of action-perturbing
adversaries (one random member per episode).  In the white-box variant the
adversaries also see the target's action mean and last hidden layer.  After
training, targets are scored adversary-free on a friction x mass grid.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .envs import RUNNER_OBS_DIM, RunnerConfig, VecParamRunner, multiplier_grid
from .introspect import IntrospectionMode, RunningMoments, compose_obs, extract_m_batch, m_dim
from .policy import GAUSSIAN, PolicyNet, make_policy, param_hash, save_checkpoint
from .ppo import PpoConfig, PpoTrainer, Rollout, fmt
from .seeding import derive_rng, derive_seed
from .stats import sem_or_nan, welch_t_one_sided

log = logging.getLogger(__name__)

N_ACTION = 1


class RarlCondition(str, Enum):
    RL_CONTROL = "rl_control"
    RARL = "rarl"
    WB_RARL = "wb_rarl"

    @classmethod
    def parse(cls, text: "str | RarlCondition") -> "RarlCondition":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "_")
        aliases = {"rl": "rl_control", "control": "rl_control", "rlcontrol": "rl_control", "wbrarl": "wb_rarl"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown RARL condition {text!r}; choose from {[c.value for c in cls]}") from None

    @property
    def introspection(self) -> IntrospectionMode:
        return IntrospectionMode.ACTION_LATENT if self is RarlCondition.WB_RARL else IntrospectionMode.BLACKBOX


@dataclass
class RarlConfig:
    condition: str = "rl_control,rarl,wb_rarl"
    agents: int = 10
    steps: int = 102_400  # target environment steps per agent
    delta: float = 0.5
    n_adversaries: int = 3
    hidden: int = 32
    adv_hidden: int = 32
    n_envs: int = 8
    eval_interval: int = 10_240
    eval_episodes: int = 20
    normalize: bool = True
    grid_lo: float = 0.6
    grid_hi: float = 1.6
    grid_n: int = 8
    grid_episodes: int = 20
    init_log_std: float = -0.5

    def conditions(self) -> list[RarlCondition]:
        return [RarlCondition.parse(t) for t in self.condition.split(",") if t.strip()]


@dataclass
class RarlExperiment:
    seed: int = 0
    runner: RunnerConfig = field(default_factory=RunnerConfig)
    rarl: RarlConfig = field(default_factory=RarlConfig)
    ppo: PpoConfig = field(default_factory=lambda: PpoConfig(steps=2048, minibatch=256, ent_coef=0.0, lr=3e-4))


def perturb_action(a_tgt, a_adv, delta: float) -> np.ndarray:
    """Executed action: target action plus the scaled adversary action, clamped to [-1, 1]."""
    a_tgt = np.asarray(a_tgt, np.float64)
    a_adv = np.asarray(a_adv, np.float64)
    if np.any(np.abs(a_adv) > 1.0):
        raise ValueError("adversary actions must lie in [-1, 1]")
    return np.clip(a_tgt + delta * a_adv, -1.0, 1.0)


def target_action(raw) -> np.ndarray:
    return np.clip(np.asarray(raw, np.float64), -1.0, 1.0)


@dataclass
class PerturbationPolicySet:
    members: list[PolicyNet]
    delta: float
    mode: IntrospectionMode
    stats: RunningMoments | None
    normalize: bool = True

    def __post_init__(self) -> None:
        if self.members and self.delta <= 0:
            raise ValueError("perturbation bound delta must be positive")

    def observe(self, target: PolicyNet, out, base_obs: np.ndarray, update: bool) -> np.ndarray:
        m = extract_m_batch(target, out, self.mode)
        if update and self.normalize and self.stats is not None and m.shape[1]:
            self.stats.update(m)
        return compose_obs(base_obs, m, self.stats, self.normalize)

    def act(self, target: PolicyNet, out, base_obs, member_idx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Squashed perturbation direction per row from each row's active member."""
        x = self.observe(target, out, base_obs, update=False)
        a = np.zeros((len(base_obs), N_ACTION))
        for k, net in enumerate(self.members):
            rows = np.flatnonzero(member_idx == k)
            if rows.size:
                a[rows] = np.tanh(net.sample(net.forward(x[rows]), rng))
        return a


class TargetDriver:
    """Rollouts for the target learner with frozen adversaries in the loop."""

    def __init__(self, exp: RarlExperiment, agent_seed: int, ensemble: PerturbationPolicySet | None):
        rc = exp.rarl
        self.cfg = exp.runner
        self.env = VecParamRunner(rc.n_envs, exp.runner, seed=derive_seed(exp.seed, "rarl", "agent", agent_seed, "target-env"))
        self.ensemble = ensemble
        # adversary-side draws have their own streams so the target's stream is
        # the same with or without an ensemble
        self.pick_rng = derive_rng(exp.seed, "rarl", "agent", agent_seed, "pick")
        self.adv_rng = derive_rng(exp.seed, "rarl", "agent", agent_seed, "ensemble-act")
        self.members = self._pick(rc.n_envs)
        self.ep_ret = np.zeros(rc.n_envs)

    def _pick(self, n: int) -> np.ndarray:
        if not self.ensemble or not self.ensemble.members:
            return np.zeros(n, np.int64)
        return self.pick_rng.integers(0, len(self.ensemble.members), size=n)

    def collect(self, net: PolicyNet, n_steps: int, rng: np.random.Generator) -> Rollout:
        E = self.env.n
        T = max(1, n_steps // E)
        obs = np.zeros((T, E, RUNNER_OBS_DIM)); acts = np.zeros((T, E, N_ACTION))
        logps = np.zeros((T, E)); vals = np.zeros((T, E)); rews = np.zeros((T, E)); dones = np.zeros((T, E), bool)
        finished = []
        for t in range(T):
            x = self.env.observe()
            out = net.forward(x)
            raw = net.sample(out, rng)
            logp, _ = net.dist_logp_entropy(out, raw)
            a = target_action(raw)
            if self.ensemble and self.ensemble.members:
                a = perturb_action(a, self.ensemble.act(net, out, x, self.members, self.adv_rng), self.ensemble.delta)
            r, done = self.env.step(a[:, 0])
            obs[t], acts[t], logps[t], vals[t], rews[t], dones[t] = x, raw, logp, out.value, r, done
            self.ep_ret += r
            if done.any():
                finished.extend(self.ep_ret[done].tolist())
                self.ep_ret[done] = 0.0
                self.members[done] = self._pick(E)[done]
        boot = net.forward(self.env.observe()).value
        return Rollout(obs, acts, logps, rews, vals, dones, boot, finished)


class AdversaryDriver:
    """Rollouts for one ensemble member against the frozen target; reward is -r_tgt."""

    def __init__(self, exp: RarlExperiment, agent_seed: int, condition: RarlCondition, k: int,
                 ensemble: PerturbationPolicySet, get_target):
        rc = exp.rarl
        tag = ("rarl", "agent", agent_seed, condition.value, "adv", k)
        self.env = VecParamRunner(rc.n_envs, exp.runner, seed=derive_seed(exp.seed, *tag, "env"))
        self.target_rng = derive_rng(exp.seed, *tag, "target-act")
        self.ensemble = ensemble
        self.get_target = get_target
        self.ep_ret = np.zeros(rc.n_envs)

    def collect(self, net: PolicyNet, n_steps: int, rng: np.random.Generator) -> Rollout:
        target = self.get_target()
        E = self.env.n
        T = max(1, n_steps // E)
        obs_l, acts, logps, vals = [], np.zeros((T, E, N_ACTION)), np.zeros((T, E)), np.zeros((T, E))
        rews, dones = np.zeros((T, E)), np.zeros((T, E), bool)
        finished = []
        for t in range(T):
            x = self.env.observe()
            t_out = target.forward(x)
            a_tgt = target_action(target.sample(t_out, self.target_rng))
            ax = self.ensemble.observe(target, t_out, x, update=True)
            out = net.forward(ax)
            raw = net.sample(out, rng)
            logp, _ = net.dist_logp_entropy(out, raw)
            r, done = self.env.step(perturb_action(a_tgt, np.tanh(raw), self.ensemble.delta)[:, 0])
            obs_l.append(ax); acts[t], logps[t], vals[t], rews[t], dones[t] = raw, logp, out.value, -r, done
            self.ep_ret -= r
            if done.any():
                finished.extend(self.ep_ret[done].tolist())
                self.ep_ret[done] = 0.0
        x = self.env.observe()
        boot = net.forward(self.ensemble.observe(target, target.forward(x), x, update=False)).value
        return Rollout(np.stack(obs_l), acts, logps, rews, vals, dones, boot, finished)


def _child(seed, i: int) -> np.random.SeedSequence:
    # explicit child key; SeedSequence.spawn would mutate a shared parent
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (i,))


def evaluate_runner(net: PolicyNet, cfg: RunnerConfig, friction_mult, mass_mult, episodes: int, seed,
                    ensemble: PerturbationPolicySet | None = None) -> np.ndarray:
    """Per-episode returns with the target's mean action.  ``friction_mult`` and
    ``mass_mult`` broadcast against ``episodes``; an ensemble (optional) plays
    its stochastic policy with members assigned round-robin."""
    fm = np.broadcast_to(np.asarray(friction_mult, np.float64), (episodes,))
    mm = np.broadcast_to(np.asarray(mass_mult, np.float64), (episodes,))
    env = VecParamRunner(episodes, cfg, fm, mm, seed=_child(seed, 0))
    adv_rng = np.random.default_rng(_child(seed, 1))
    members = np.arange(episodes) % max(1, len(ensemble.members)) if ensemble else None
    total = np.zeros(episodes)
    for _ in range(cfg.max_steps):
        x = env.observe()
        out = net.forward(x)
        a = target_action(net.mode(out))
        if ensemble and ensemble.members:
            a = perturb_action(a, ensemble.act(net, out, x, members, adv_rng), ensemble.delta)
        r, _ = env.step(a[:, 0])
        total += r
    return total


def domain_shift_grid(target: PolicyNet, cfg: RunnerConfig, lo: float = 0.6, hi: float = 1.6, n: int = 8,
                      episodes: int = 20, seed=0) -> list[dict]:
    """Adversary-free mean episode return for every (friction, mass) multiplier pair."""
    if episodes < 20:
        raise ValueError("grid cells need at least 20 evaluation episodes")
    mults = multiplier_grid(lo, hi, n)
    fm, mm = np.meshgrid(mults, mults, indexing="ij")
    fm_e = np.repeat(fm.ravel(), episodes)
    mm_e = np.repeat(mm.ravel(), episodes)
    returns = evaluate_runner(target, cfg, fm_e, mm_e, len(fm_e), seed).reshape(n * n, episodes)
    rows = []
    for i, (f, m) in enumerate(zip(fm.ravel(), mm.ravel())):
        rows.append({"frictionMult": float(f), "massMult": float(m), "mean": float(returns[i].mean()),
                     "sem": sem_or_nan(returns[i]), "n": episodes})
    return rows


@dataclass
class RarlRunResult:
    condition: RarlCondition
    seed: int
    target: PolicyNet
    adversaries: list[PolicyNet]
    steps: list[int]
    eval_free: list[float]
    eval_adv: list[float]

    @property
    def final_eval(self) -> float:
        return self.eval_free[-1]


def rarl_train(condition: RarlCondition | str, exp: RarlExperiment, seed: int, metrics_dir=None) -> RarlRunResult:
    condition = RarlCondition.parse(condition)
    rc = exp.rarl
    if rc.steps % rc.eval_interval:
        raise ValueError("rarl.eval_interval must divide rarl.steps")
    target = make_policy(RUNNER_OBS_DIM, N_ACTION, derive_rng(exp.seed, "rarl", "agent", seed, "target-init"),
                         hidden=rc.hidden, kind=GAUSSIAN, init_log_std=rc.init_log_std)
    mdir = Path(metrics_dir) if metrics_dir else None
    name = f"{condition.value}_s{seed}"
    t_trainer = PpoTrainer(target, exp.ppo, mdir / f"{name}_target_metrics.csv" if mdir else None)
    t_rng = derive_rng(exp.seed, "rarl", "agent", seed, "target-ppo")

    members: list[PolicyNet] = []
    a_trainers: list[PpoTrainer] = []
    a_drivers: list[AdversaryDriver] = []
    a_rngs = []
    ensemble = None
    if condition is not RarlCondition.RL_CONTROL and rc.n_adversaries > 0:
        mode = condition.introspection
        width = RUNNER_OBS_DIM + m_dim(mode, N_ACTION, rc.hidden)
        stats = RunningMoments(width - RUNNER_OBS_DIM) if width > RUNNER_OBS_DIM else None
        ensemble = PerturbationPolicySet([], rc.delta, mode, stats, rc.normalize)
        for k in range(rc.n_adversaries):
            tag = ("rarl", "agent", seed, condition.value, "adv", k)
            members.append(make_policy(width, N_ACTION, derive_rng(exp.seed, *tag, "init"),
                                       hidden=rc.adv_hidden, kind=GAUSSIAN))
            a_trainers.append(PpoTrainer(members[k], exp.ppo, mdir / f"{name}_adv{k}_metrics.csv" if mdir else None))
            a_drivers.append(AdversaryDriver(exp, seed, condition, k, ensemble, lambda: t_trainer.net))
            a_rngs.append(derive_rng(exp.seed, *tag, "ppo"))
        ensemble.members = [tr.net for tr in a_trainers]
    driver = TargetDriver(exp, seed, ensemble)
    eval_seed = derive_seed(exp.seed, "rarl", "eval")

    def evaluate() -> tuple[float, float]:
        free = float(evaluate_runner(t_trainer.net, exp.runner, 1.0, 1.0, rc.eval_episodes, eval_seed).mean())
        if ensemble is None:
            return free, free
        adv = float(evaluate_runner(t_trainer.net, exp.runner, 1.0, 1.0, rc.eval_episodes, eval_seed, ensemble).mean())
        return free, adv

    steps, free, adv = [0], *map(lambda v: [v], evaluate())
    next_eval = rc.eval_interval
    while t_trainer.env_steps < rc.steps:
        before = [param_hash(m) for m in ensemble.members] if ensemble else []
        t_trainer.step(driver, t_rng)
        if ensemble and [param_hash(m) for m in ensemble.members] != before:
            raise RuntimeError("adversary parameters changed during a target block")
        t_hash = param_hash(t_trainer.net)
        for k, (tr, drv, r) in enumerate(zip(a_trainers, a_drivers, a_rngs)):
            tr.step(drv, r)
            ensemble.members[k] = tr.net
        if param_hash(t_trainer.net) != t_hash:
            raise RuntimeError("target parameters changed during an adversary block")
        if t_trainer.env_steps >= next_eval:
            f, a = evaluate()
            steps.append(next_eval); free.append(f); adv.append(a)
            log.info("rarl %s seed=%d step=%d eval %.3f under-adversary %.3f", condition.value, seed, next_eval, f, a)
            next_eval += rc.eval_interval
    return RarlRunResult(condition, seed, t_trainer.net, list(ensemble.members) if ensemble else [], steps, free, adv)


def select_top_half(results: list[RarlRunResult]) -> list[tuple[RarlRunResult, int]]:
    """Best half by final adversary-free eval; ties go to the lower seed.
    Returns ``(result, rank)`` for every agent, rank 1 being best."""
    ordered = sorted(results, key=lambda r: (-r.final_eval, r.seed))
    return [(r, i + 1) for i, r in enumerate(ordered)]


def _write(path: Path, cols, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([fmt(row[c]) if isinstance(row[c], (int, float, np.integer, np.floating)) else row[c]
                        for c in cols])


GRID_COLUMNS = ["frictionMult", "massMult", "mean", "sem", "n"]


def rarl_study(exp: RarlExperiment, out_dir) -> dict:
    rc = exp.rarl
    out = Path(out_dir)
    for sub in ("curves", "grids", "targets", "runs"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    agents_rows, grid_means, cell_means = [], {}, {}
    n_keep = rc.agents // 2
    for cond in rc.conditions():
        results = []
        for s in range(rc.agents):
            res = rarl_train(cond, exp, s, out / "runs")
            name = f"{cond.value}_s{s}"
            _write(out / "curves" / f"{name}.csv", ["env_steps", "eval_mean", "eval_under_adversary"],
                   [{"env_steps": a, "eval_mean": b, "eval_under_adversary": c}
                    for a, b, c in zip(res.steps, res.eval_free, res.eval_adv)])
            save_checkpoint(res.target, out / "targets" / f"{name}.ckpt")
            results.append(res)
        ranked = select_top_half(results)
        if n_keep < 2:
            raise ValueError(f"condition {cond.value}: only {n_keep} agents survive selection; need at least 2")
        grid_means[cond] = []
        cell_means[cond] = []
        for res, rank in ranked:
            name = f"{cond.value}_s{res.seed}"
            selected = rank <= n_keep
            grid_path = ""
            if selected:
                rows = domain_shift_grid(res.target, exp.runner, rc.grid_lo, rc.grid_hi, rc.grid_n,
                                         rc.grid_episodes, derive_seed(exp.seed, "rarl", "grid"))
                grid_path = f"grids/{name}.csv"
                _write(out / grid_path, GRID_COLUMNS, rows)
                grid_means[cond].append(float(np.mean([r["mean"] for r in rows])))
                cell_means[cond].append(np.array([r["mean"] for r in rows]))
            agents_rows.append({"condition": cond.value, "seed": res.seed, "final_eval": res.final_eval,
                                "rank": rank, "selected": int(selected), "grid_csv": grid_path})
    _write(out / "agents.csv", ["condition", "seed", "final_eval", "rank", "selected", "grid_csv"], agents_rows)

    mults = multiplier_grid(rc.grid_lo, rc.grid_hi, rc.grid_n)
    fm, mm = np.meshgrid(mults, mults, indexing="ij")
    agg = []
    for cond, cells in cell_means.items():
        arr = np.stack(cells)
        for i in range(arr.shape[1]):
            agg.append({"condition": cond.value, "frictionMult": float(fm.ravel()[i]), "massMult": float(mm.ravel()[i]),
                        "mean": float(arr[:, i].mean()), "sem": sem_or_nan(arr[:, i]), "n": arr.shape[0]})
    _write(out / "grid_aggregate.csv", ["condition"] + GRID_COLUMNS, agg)
    _write(out / "grid_means.csv", ["condition", "n", "mean", "sem"],
           [{"condition": c.value, "n": len(v), "mean": float(np.mean(v)), "sem": sem_or_nan(v)}
            for c, v in grid_means.items()])

    tests = []
    pairs = [(RarlCondition.WB_RARL, RarlCondition.RL_CONTROL), (RarlCondition.WB_RARL, RarlCondition.RARL),
             (RarlCondition.RARL, RarlCondition.RL_CONTROL)]
    for a, b in pairs:
        if a in grid_means and b in grid_means:
            t, df, p = welch_t_one_sided(grid_means[a], grid_means[b])
            tests.append({"condition": a.value, "vs": b.value, "mean": float(np.mean(grid_means[a])),
                          "control_mean": float(np.mean(grid_means[b])), "t": t, "df": df, "p": p})
    _write(out / "tests.csv", ["condition", "vs", "mean", "control_mean", "t", "df", "p"], tests)

    corners = []
    if RarlCondition.RL_CONTROL in cell_means:
        ctrl = np.stack(cell_means[RarlCondition.RL_CONTROL]).mean(axis=0)
        n = rc.grid_n
        for label, (i, j) in {"lo_lo": (0, 0), "lo_hi": (0, n - 1), "hi_lo": (n - 1, 0), "hi_hi": (n - 1, n - 1)}.items():
            c = i * n + j
            for cond in (RarlCondition.RARL, RarlCondition.WB_RARL):
                if cond not in cell_means:
                    continue
                vals = np.stack(cell_means[cond])[:, c]
                frac = float(np.mean(vals >= ctrl[c]))
                corners.append({"corner": label, "frictionMult": float(fm[i, j]), "massMult": float(mm[i, j]),
                                "condition": cond.value, "control_mean": float(ctrl[c]), "mean": float(vals.mean()),
                                "fraction_at_least_control": frac, "majority": int(frac > 0.5)})
    _write(out / "corners.csv", ["corner", "frictionMult", "massMult", "condition", "control_mean", "mean",
                                  "fraction_at_least_control", "majority"], corners)
    return {"tests": tests, "corners": corners, "grid_means": {c.value: v for c, v in grid_means.items()}}
