"""Adversarial policies against frozen MiniSoccer targets.

A target is pretrained in two phases (against the scripted bot with an
entropy bonus, then against a frozen phase-1 snapshot with an entropy
penalty).  Adversaries of each introspection mode are then trained with PPO
against the frozen target and compared in net points per game.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .envs import N_ACTIONS, OBS_DIM, SoccerConfig, VecMiniSoccer, scripted_bot_batch
from .introspect import (
    IntrospectionMode,
    RunningMoments,
    compose_obs,
    extract_m_batch,
    m_dim,
)
from .policy import PolicyNet, load_checkpoint, make_policy, param_hash, save_checkpoint
from .ppo import PpoConfig, PpoTrainer, Rollout, fmt
from .seeding import derive_rng, derive_seed
from .stats import aggregate_curves, sem_or_nan, welch_t_one_sided

log = logging.getLogger(__name__)


@dataclass
class TargetConfig:
    count: int = 5
    hidden: int = 64
    phase1_steps: int = 300_000
    phase2_steps: int = 300_000
    phase1_ent: float = 0.01
    phase2_ent: float = -0.001
    gate_episodes: int = 100
    max_attempts: int = 15
    n_envs: int = 16
    pool: str = ""  # directory of saved targets; empty = pretrain


@dataclass
class AdversaryConfig:
    mode: str = "blackbox,action_value,latent,full"
    hidden: int = 64
    steps: int = 500_000
    eval_interval: int = 50_000
    eval_episodes: int = 50
    seeds: int = 3
    normalize: bool = True
    target_greedy: bool = False
    early_fraction: float = 0.1
    n_envs: int = 16

    def modes(self) -> list[IntrospectionMode]:
        text = self.mode.strip().lower()
        if text == "all":
            text = "blackbox,action_value,latent,full"
        return [IntrospectionMode.parse(t) for t in text.split(",") if t.strip()]


@dataclass
class Attack2pExperiment:
    seed: int = 0
    soccer: SoccerConfig = field(default_factory=SoccerConfig)
    target: TargetConfig = field(default_factory=TargetConfig)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)


# -- rollout source -----------------------------------------------------------

class SoccerDriver:
    """Learner plays side A; side B is the scripted bot (``opponent=None``) or
    a frozen policy.  With a frozen policy and a ``mode``, the learner's
    observation is the base observation followed by the opponent's feature
    vector from the same forward pass that picks the opponent's action.
    ``mode=None`` skips the introspection code path entirely."""

    def __init__(
        self,
        soccer: SoccerConfig,
        n_envs: int,
        opponent: PolicyNet | None,
        mode: IntrospectionMode | None = None,
        normalize: bool = True,
        env_seed: int | np.random.SeedSequence = 0,
        opponent_greedy: bool = False,
    ):
        self.soccer = soccer
        self.env = VecMiniSoccer(n_envs, soccer, env_seed)
        self.opponent = opponent
        self.mode = IntrospectionMode.parse(mode) if mode is not None else None
        self.opponent_greedy = opponent_greedy
        if self.mode is not None and self.mode != IntrospectionMode.BLACKBOX and opponent is None:
            raise ValueError("white-box modes need a policy opponent")
        self.m_dim = 0 if self.mode is None or opponent is None else m_dim(self.mode, opponent.n_out, opponent.hidden)
        self.stats = RunningMoments(self.m_dim) if (normalize and self.m_dim) else None
        self.obs_dim = OBS_DIM + self.m_dim
        self.ep_return = np.zeros(n_envs)

    def _opponent_act(self, obs_b: np.ndarray, rng: np.random.Generator, update_stats: bool):
        if self.opponent is None:
            return scripted_bot_batch(obs_b, rng, self.soccer), None
        out = self.opponent.forward(obs_b)
        act = self.opponent.mode(out) if self.opponent_greedy else self.opponent.sample(out, rng)
        if self.mode is None:
            return act, None
        m = extract_m_batch(self.opponent, out, self.mode)
        if self.stats is not None and update_stats:
            self.stats.update(m)
        return act, m

    def _compose(self, obs_a: np.ndarray, m: np.ndarray | None) -> np.ndarray:
        if m is None:
            return obs_a
        return compose_obs(obs_a, m, self.stats, normalize=self.stats is not None)

    def collect(self, net: PolicyNet, n_steps: int, rng: np.random.Generator) -> Rollout:
        if net.obs_dim != self.obs_dim:
            raise ValueError(f"learner input width {net.obs_dim} != observation width {self.obs_dim}")
        E = self.env.n
        T = -(-n_steps // E)
        obs = np.empty((T, E, self.obs_dim))
        acts = np.empty((T, E), np.int64)
        logps, vals, rews, opp_rews = (np.empty((T, E)) for _ in range(4))
        dones = np.empty((T, E), bool)
        returns, points = [], []
        for t in range(T):
            obs_a, obs_b = self.env.observe()
            act_b, m = self._opponent_act(obs_b, rng, update_stats=True)
            x = self._compose(obs_a, m)
            out = net.forward(x)
            act = net.sample(out, rng)
            logp, _ = net.dist_logp_entropy(out, act)
            r_a, r_b, done, _, _ = self.env.step(act, act_b)
            obs[t], acts[t], logps[t], vals[t], rews[t], opp_rews[t], dones[t] = x, act, logp, out.value, r_a, r_b, done
            self.ep_return += r_a
            if done.any():
                returns.extend(self.ep_return[done].tolist())
                points.extend((self.env.last_goals_a[done] - self.env.last_goals_b[done]).tolist())
                self.ep_return[done] = 0.0
        obs_a, obs_b = self.env.observe()
        _, m = self._opponent_act(obs_b, np.random.default_rng(0), update_stats=False) if self.opponent is not None else (None, None)
        boot = net.forward(self._compose(obs_a, m)).value
        info = {"mean_net_points": float(np.mean(points)) if points else float("nan")}
        return Rollout(obs, acts, logps, rews, vals, dones, boot, returns, info, {"opponent_rewards": opp_rews})


def evaluate_match(
    learner: PolicyNet,
    opponent: PolicyNet | None,
    soccer: SoccerConfig,
    n_episodes: int,
    seed: int | np.random.SeedSequence,
    mode: IntrospectionMode | None = None,
    stats: RunningMoments | None = None,
    learner_greedy: bool = True,
    opponent_greedy: bool = True,
) -> np.ndarray:
    """Net points (learner goals minus opponent goals) for each of ``n_episodes``
    full episodes, played in parallel.  ``stats`` are read, never updated."""
    ss = np.random.SeedSequence(seed) if isinstance(seed, int) else seed
    env_ss, act_ss = ss.spawn(2)
    drv = SoccerDriver(soccer, n_episodes, opponent, mode, normalize=False, env_seed=env_ss,
                       opponent_greedy=opponent_greedy)
    drv.stats = stats
    rng = np.random.default_rng(act_ss)
    points = np.zeros(n_episodes)
    for _ in range(soccer.max_steps):
        obs_a, obs_b = drv.env.observe()
        act_b, m = drv._opponent_act(obs_b, rng, update_stats=False)
        out = learner.forward(drv._compose(obs_a, m))
        act = learner.mode(out) if learner_greedy else learner.sample(out, rng)
        _, _, done, _, _ = drv.env.step(act, act_b)
        if done.all():
            points = (drv.env.last_goals_a - drv.env.last_goals_b).astype(np.float64)
    return points


# -- targets -----------------------------------------------------------------

@dataclass
class TargetArtifact:
    net: PolicyNet
    provenance: dict
    frozen: bool = True
    competent: bool = True

    def save(self, path_stem: str | Path) -> None:
        path_stem = Path(path_stem)
        save_checkpoint(self.net, path_stem.with_suffix(".ckpt"))
        meta = dict(self.provenance, frozen=self.frozen, competent=self.competent, hash=param_hash(self.net))
        path_stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path_stem: str | Path) -> "TargetArtifact":
        path_stem = Path(path_stem)
        meta = json.loads(path_stem.with_suffix(".json").read_text())
        net = load_checkpoint(path_stem.with_suffix(".ckpt"))
        if meta.get("hash") and meta["hash"] != param_hash(net):
            raise ValueError(f"target checkpoint {path_stem} does not match its recorded hash")
        return cls(net, meta, meta.get("frozen", True), meta.get("competent", True))


def _train_for(trainer: PpoTrainer, source, budget: int, rng: np.random.Generator) -> None:
    start = trainer.env_steps
    while trainer.env_steps - start < budget:
        trainer.step(source, rng)


def pretrain_target(exp: Attack2pExperiment, seed: int, metrics_path: str | Path | None = None) -> TargetArtifact:
    tc, soccer = exp.target, exp.soccer
    net = make_policy(OBS_DIM, N_ACTIONS, derive_rng(seed, "target", "init"), hidden=tc.hidden)
    ppo1 = replace(exp.ppo, ent_coef=tc.phase1_ent)
    trainer = PpoTrainer(net, ppo1, metrics_path)
    rng = derive_rng(seed, "target", "phase1", "ppo")
    bot_source = SoccerDriver(soccer, tc.n_envs, None, env_seed=derive_seed(seed, "target", "phase1", "env"))
    _train_for(trainer, bot_source, tc.phase1_steps, rng)
    phase1 = trainer.net.copy()
    gate_points = evaluate_match(phase1, None, soccer, tc.gate_episodes, derive_seed(seed, "target", "gate"))
    gate = float(gate_points.mean())

    trainer.cfg = replace(exp.ppo, ent_coef=tc.phase2_ent)
    rng2 = derive_rng(seed, "target", "phase2", "ppo")
    peer_source = SoccerDriver(soccer, tc.n_envs, phase1, env_seed=derive_seed(seed, "target", "phase2", "env"))
    _train_for(trainer, peer_source, tc.phase2_steps, rng2)
    final = trainer.net
    vs_bot = float(evaluate_match(final, None, soccer, tc.gate_episodes, derive_seed(seed, "target", "final")).mean())
    provenance = {
        "seed": seed,
        "phase1_steps": tc.phase1_steps,
        "phase2_steps": tc.phase2_steps,
        "phase1_ent": tc.phase1_ent,
        "phase2_ent": tc.phase2_ent,
        "env_steps": trainer.env_steps,
        "phase1_vs_bot": gate,
        "final_vs_bot": vs_bot,
        "scale_note": "desk scale; phase budgets are far below what large-scale self-play uses",
    }
    log.info("target seed=%d phase1 vs bot %.3f final vs bot %.3f", seed, gate, vs_bot)
    return TargetArtifact(final, provenance, frozen=True, competent=gate > 0.0)


# -- adversaries ------------------------------------------------------------

@dataclass
class AttackRunResult:
    mode: IntrospectionMode
    target_id: int
    seed: int
    steps: list[int]
    net_points: list[float]
    total_env_steps: int
    adversary: PolicyNet | None = None
    stats: RunningMoments | None = None

    def at_step(self, step: int) -> float:
        return self.net_points[self.steps.index(step)]


def train_adversary(
    target: TargetArtifact,
    mode: IntrospectionMode,
    exp: Attack2pExperiment,
    seed: int,
    target_id: int = 0,
    metrics_path: str | Path | None = None,
) -> AttackRunResult:
    ac = exp.adversary
    mode = IntrospectionMode.parse(mode)
    if ac.steps % ac.eval_interval:
        raise ValueError("adversary.eval_interval must divide adversary.steps")
    if not target.frozen:
        raise ValueError("adversaries are trained only against frozen targets")
    before = param_hash(target.net)
    path = (mode.value, target_id, seed)
    driver = SoccerDriver(exp.soccer, ac.n_envs, target.net, mode, normalize=ac.normalize,
                          env_seed=derive_seed(exp.seed, "attack", *path, "env"),
                          opponent_greedy=ac.target_greedy)
    net = make_policy(driver.obs_dim, N_ACTIONS, derive_rng(exp.seed, "attack", *path, "init"), hidden=ac.hidden)
    if net.obs_dim != OBS_DIM + m_dim(mode, target.net.n_out, target.net.hidden):
        raise ValueError("adversary input width does not match the introspection mode")
    trainer = PpoTrainer(net, exp.ppo, metrics_path)
    rng = derive_rng(exp.seed, "attack", *path, "ppo")

    def evaluate(step: int) -> float:
        pts = evaluate_match(trainer.net, target.net, exp.soccer, ac.eval_episodes,
                             derive_seed(exp.seed, "attack", *path, "eval", step), mode,
                             copy.deepcopy(driver.stats), opponent_greedy=True)
        return float(pts.mean())

    # evaluation happens at the first iteration boundary past each grid point
    # and is labelled with the grid point
    steps, curve = [0], [evaluate(0)]
    next_eval = ac.eval_interval
    while trainer.env_steps < ac.steps:
        trainer.step(driver, rng)
        if trainer.env_steps >= next_eval:
            steps.append(next_eval)
            curve.append(evaluate(next_eval))
            log.info("attack %s target=%d seed=%d step=%d net points %.3f",
                     mode.value, target_id, seed, next_eval, curve[-1])
            next_eval += ac.eval_interval
    if param_hash(target.net) != before:
        raise RuntimeError("target parameters changed during an attack run")
    return AttackRunResult(mode, target_id, seed, steps, curve, trainer.env_steps, trainer.net, driver.stats)


def write_curve(result: AttackRunResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["env_steps", "net_points"])
        for s, v in zip(result.steps, result.net_points):
            w.writerow([s, fmt(v)])


def per_target_curves(results: list[AttackRunResult]) -> tuple[list[int], dict[int, np.ndarray]]:
    """Average the seeds of each target; returns (steps, target -> curve)."""
    steps = results[0].steps
    by_target: dict[int, list[list[float]]] = {}
    for r in results:
        if r.steps != steps:
            raise ValueError("runs do not share evaluation steps")
        by_target.setdefault(r.target_id, []).append(r.net_points)
    return steps, {t: np.mean(np.array(v), axis=0) for t, v in sorted(by_target.items())}


def compare_modes(results: list[AttackRunResult], early_fraction: float = 0.1):
    """Mean/SEM curves per mode across targets, and one-sided Welch tests of
    each white-box mode against the black-box control.

    Returns ``(curve_rows, test_rows)``; the sample unit is one target (its
    seeds averaged).
    """
    by_mode: dict[IntrospectionMode, list[AttackRunResult]] = {}
    for r in results:
        by_mode.setdefault(r.mode, []).append(r)
    curve_rows, per_mode = [], {}
    for mode, rs in by_mode.items():
        steps, curves = per_target_curves(rs)
        mat = np.array(list(curves.values()))
        per_mode[mode] = (steps, mat)
        for row in aggregate_curves([dict(zip(steps, c)) for c in mat], steps):
            curve_rows.append({"mode": mode.value, **row})
    test_rows = []
    control = per_mode.get(IntrospectionMode.BLACKBOX)
    if control is not None:
        steps, ctrl = control
        final = steps[-1]
        early = min(steps[1:] or steps, key=lambda s: abs(s - early_fraction * final))
        points = {"final": steps.index(final), "early": steps.index(early)}
        for mode, (_, mat) in per_mode.items():
            if mode == IntrospectionMode.BLACKBOX:
                continue
            for label, idx in points.items():
                test_rows.append(_test_row(mode.value, label, steps[idx], mat[:, idx], ctrl[:, idx]))
            test_rows.append(_test_row(mode.value, "auc", final, mat.mean(axis=1), ctrl.mean(axis=1)))
    return curve_rows, test_rows


def _test_row(mode: str, label: str, step: int, a: np.ndarray, b: np.ndarray) -> dict:
    row = {"mode": mode, "vs": "blackbox", "point": label, "env_steps": step,
           "mean": float(np.mean(a)), "control_mean": float(np.mean(b)), "n": len(a), "n_control": len(b)}
    try:
        t, df, p = welch_t_one_sided(a, b)
    except ValueError as exc:
        log.warning("t-test skipped for %s/%s: %s", mode, label, exc)
        t = df = p = float("nan")
    row.update(t=t, df=df, p=p)
    return row


def load_target_pool(directory: str | Path) -> list[TargetArtifact]:
    stems = sorted({p.with_suffix("") for p in Path(directory).glob("*.ckpt")})
    pool = [TargetArtifact.load(s) for s in stems]
    return [t for t in pool if t.competent]


def run_attack2p(exp: Attack2pExperiment, out_dir: Path) -> dict:
    """Whole experiment: target pool, every (target, mode, seed) attack run,
    per-run curves and the comparison CSVs."""
    out_dir = Path(out_dir)
    (out_dir / "targets").mkdir(parents=True, exist_ok=True)
    (out_dir / "runs").mkdir(exist_ok=True)
    (out_dir / "adversaries").mkdir(exist_ok=True)
    if exp.target.pool:
        targets = load_target_pool(exp.target.pool)[: exp.target.count]
    else:
        targets, attempts = [], 0
        while len(targets) < exp.target.count and attempts < exp.target.max_attempts:
            tseed = int(derive_seed(exp.seed, "target-seed", attempts).generate_state(1)[0])
            art = pretrain_target(exp, tseed, out_dir / "targets" / f"attempt{attempts}_metrics.csv")
            art.save(out_dir / "targets" / f"attempt{attempts}")
            attempts += 1
            if art.competent:
                targets.append(art)
            else:
                log.warning("target attempt %d failed the competence gate; excluded", attempts - 1)
    if len(targets) < exp.target.count:
        raise RuntimeError(f"only {len(targets)} competent targets available, need {exp.target.count}")
    results = []
    for ti, target in enumerate(targets):
        for mode in exp.adversary.modes():
            for s in range(exp.adversary.seeds):
                stem = f"{mode.value}_t{ti}_s{s}"
                res = train_adversary(target, mode, exp, s, ti, out_dir / "runs" / f"{stem}_metrics.csv")
                write_curve(res, out_dir / "runs" / f"{stem}.csv")
                save_checkpoint(res.adversary, out_dir / "adversaries" / f"{stem}.ckpt")
                results.append(res)
    curve_rows, test_rows = compare_modes(results, exp.adversary.early_fraction)
    write_rows(out_dir / "comparison.csv", ["mode", "env_steps", "mean", "sem", "n"], curve_rows)
    write_rows(out_dir / "tests.csv",
               ["mode", "vs", "point", "env_steps", "mean", "control_mean", "n", "n_control", "t", "df", "p"],
               test_rows)
    return {"targets": [t.provenance for t in targets], "runs": len(results), "tests": test_rows}


def write_rows(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], str) else fmt(r[c]) for c in columns])
