"""One PASS/FAIL line per acceptance criterion.

Criteria 1-4 and 8 are computed here.  Criteria 5-7 need the long runs made by
``python scripts/run_acceptance.py``; they read the results from
``$ADVPOL_ACCEPTANCE_DIR`` (default ``<repo>/acceptance``) and are skipped
when a run is missing or incomplete.
"""

import csv
import json
import os
from pathlib import Path

import numpy as np
import pytest

from advpol.envs import N_ACTIONS, RunnerConfig, SoccerConfig, TwoArmedBandit, VecMiniSoccer, VecParamRunner
from advpol.numkit import init_mlp, mlp_backward, mlp_forward
from advpol.policy import CATEGORICAL, GAUSSIAN, make_policy
from advpol.ppo import PpoConfig, PpoTrainer, RolloutBatch, compute_gae, ppo_loss
from advpol.rarl import perturb_action
from advpol.seeding import derive_rng
from advpol.stats import welch_t_one_sided

from conftest import numeric_grad, rel_error
from test_ppo import discounted_returns_oracle
from test_stats import WELCH_ORACLE

ROOT = Path(__file__).resolve().parents[1]
ACCEPTANCE_DIR = Path(os.environ.get("ADVPOL_ACCEPTANCE_DIR", ROOT / "acceptance"))


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail

    return emit


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def finished_run(kind: str, capsys, n: int) -> Path:
    run_dir = ACCEPTANCE_DIR / kind
    mpath = run_dir / "manifest.json"
    status = json.loads(mpath.read_text()).get("status") if mpath.exists() else "missing"
    if status != "complete":
        with capsys.disabled():
            print(f"\nCRITERION {n}: SKIP | no complete {kind} run in {run_dir} ({status}); "
                  "run scripts/run_acceptance.py")
        pytest.skip(f"{kind} acceptance run {status}")
    return run_dir


# -- 1 --------------------------------------------------------------------------

def test_criterion_1_numerical_core(report):
    worst_mlp = worst_ppo = 0.0
    for i in range(100):
        rng = np.random.default_rng(1000 + i)
        sizes = list(rng.integers(1, 6, size=rng.integers(2, 5)))
        params = init_mlp(sizes, rng, gain=1.0)
        x = rng.normal(size=(rng.integers(1, 4), sizes[0]))
        up = rng.normal(size=(len(x), sizes[-1]))
        out, cache = mlp_forward(params, x)
        grads, dx = mlp_backward(params, cache, up)
        num = numeric_grad(lambda: float((mlp_forward(params, x)[0] * up).sum()), params.arrays() + [x])
        worst_mlp = max(worst_mlp, *(rel_error(g, n) for g, n in zip(grads + [dx], num)))

        kind = CATEGORICAL if i % 2 == 0 else GAUSSIAN
        net = make_policy(3, 2, rng, hidden=int(rng.integers(2, 6)), kind=kind, head_gain=1.0, init_log_std=-0.2)
        obs = rng.normal(size=(6, 3))
        o = net.forward(obs)
        acts = rng.integers(0, 2, size=6) if kind == CATEGORICAL else o.head + rng.normal(size=o.head.shape)
        logp, _ = net.dist_logp_entropy(o, acts)
        batch = RolloutBatch(obs, acts, logp + rng.normal(scale=0.5, size=6), np.zeros(6), np.zeros(6),
                             np.zeros(6, bool), rng.normal(size=6), rng.normal(size=6), 0.99, 0.95)
        cfg = PpoConfig(ent_coef=0.01)
        p = net.parameters()
        _, g_ppo, _ = ppo_loss(batch, net, cfg)
        num = numeric_grad(lambda: ppo_loss(batch, net.with_parameters(p), cfg)[0], p)
        worst_ppo = max(worst_ppo, *(rel_error(g, n) for g, n in zip(g_ppo, num)))

    worst_p = max(abs(welch_t_one_sided(a, b)[2] - p) for a, b, _, _, p in WELCH_ORACLE)
    ok = worst_mlp <= 1e-4 and worst_ppo <= 1e-4 and worst_p <= 1e-6
    report(1, ok, f"max rel err mlp {worst_mlp:.2e}, ppo_loss {worst_ppo:.2e} (<=1e-4); "
                  f"max Welch |dp| {worst_p:.2e} (<=1e-6)")


# -- 2 --------------------------------------------------------------------------

def test_criterion_2_gae_oracle(report):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 16))
        gamma = float(rng.uniform(0.0, 0.999))
        r, v = rng.normal(size=T), rng.normal(size=T)
        d = rng.random(T) < 0.3
        boot = float(rng.normal())
        adv, _ = compute_gae(r[:, None], v[:, None], d[:, None], np.array([boot]), gamma, 1.0)
        worst = max(worst, float(np.max(np.abs(adv[:, 0] - discounted_returns_oracle(r, v, d, boot, gamma)))))
    report(2, worst <= 1e-12, f"max |GAE(lambda=1) - oracle| {worst:.2e} over 1000 sequences (<=1e-12)")


# -- 3 --------------------------------------------------------------------------

def soccer_trace(seed: int, steps: int):
    env = VecMiniSoccer(8, SoccerConfig(), seed)
    rng = np.random.default_rng(seed + 1)
    ra_all, rb_all, obs_all = [], [], []
    for _ in range(steps // 8):
        ra, rb, _, _, _ = env.step(rng.integers(0, N_ACTIONS, 8), rng.integers(0, N_ACTIONS, 8))
        ra_all.append(ra); rb_all.append(rb); obs_all.append(env.observe()[0])
    return np.array(ra_all), np.array(rb_all), np.array(obs_all)


def test_criterion_3_environment_invariants(report):
    ra, rb, obs = soccer_trace(3, 10_000)
    ra2, rb2, obs2 = soccer_trace(3, 10_000)
    zero_sum = bool(np.all(ra + rb == 0.0))
    deterministic = np.array_equal(ra, ra2) and np.array_equal(rb, rb2) and np.array_equal(obs, obs2)

    # nonnegative pushes from rest: velocity is nonincreasing in friction at every step
    mults = np.linspace(0.6, 1.6, 8)
    cfg = RunnerConfig(max_steps=10_000, init_v_noise=0.0)
    env = VecParamRunner(len(mults), cfg, friction_mult=mults, seed=0)
    rng = np.random.default_rng(3)
    monotone = True
    for _ in range(10_000):
        env.step(np.full(len(mults), rng.random()))
        monotone &= bool(np.all(np.diff(env.v) <= 0.0))

    a_t = rng.uniform(-1, 1, 10_000)
    a_adv = rng.uniform(-1, 1, 10_000)
    delta = 0.5
    dev = float(np.max(np.abs(perturb_action(a_t, a_adv, delta) - a_t)))
    ok = zero_sum and deterministic and monotone and dev <= delta
    report(3, ok, f"soccer zero-sum {zero_sum}, deterministic {deterministic} over 10k steps; "
                  f"runner friction-monotone {monotone}; max |perturbation| {dev:.3f} <= delta {delta}")


# -- 4 --------------------------------------------------------------------------

def bandit_iterations(seed: int, limit: int = 300) -> int | None:
    env = TwoArmedBandit(seed=seed)
    trainer = PpoTrainer(make_policy(1, 2, derive_rng(seed, "init"), hidden=16),
                         PpoConfig(steps=128, minibatch=64, gamma=0.0))
    rng = derive_rng(seed, "ppo")
    for it in range(1, limit + 1):
        trainer.step(env, rng)
        if trainer.net.forward(np.ones((1, 1))).probs[0, env.best_arm] >= 0.95:
            return it
    return None


def test_criterion_4_bandit(report):
    its = [bandit_iterations(s) for s in range(10)]
    solved = sum(i is not None for i in its)
    report(4, solved >= 9, f"{solved}/10 seeds reach 0.95 within 300 iterations (need 9); iterations {its}")


# -- 5 --------------------------------------------------------------------------

def test_criterion_5_attack2p(report, capsys):
    run = finished_run("attack2p", capsys, 5)
    cfg = (run / "config.cfg").read_text()
    comp = read_csv(run / "comparison.csv")
    tests = read_csv(run / "tests.csv")
    final = max(int(r["env_steps"]) for r in comp)
    half = final // 2
    curve = {(r["mode"], int(r["env_steps"])): float(r["mean"]) for r in comp}
    t = next(r for r in tests if r["mode"] == "latent" and r["point"] == "final")
    p = float(t["p"])
    n_targets = int(t["n"])
    seeds = int(next(line.split("=")[1] for line in cfg.splitlines() if line.startswith("adversary.seeds=")))
    lat_half, bb_final = curve[("latent", half)], curve[("blackbox", final)]
    scale_ok = n_targets >= 5 and seeds >= 3 and final >= 500_000
    ok = scale_ok and p < 0.05 and lat_half >= bb_final
    report(5, ok, f"{n_targets} targets x {seeds} seeds, budget {final}; latent vs blackbox final p={p:.4g} "
                  f"(<0.05); latent@{half} {lat_half:.3f} vs blackbox@{final} {bb_final:.3f} (need >=)")


# -- 6 --------------------------------------------------------------------------

def test_criterion_6_lmattack(report, capsys):
    run = finished_run("lmattack", capsys, 6)
    base = float(read_csv(run / "base_rate.csv")[0]["base_rate"])
    comp = read_csv(run / "comparison.csv")
    final = max(int(r["env_steps"]) for r in comp)
    finals = {r["mode"]: float(r["mean"]) for r in comp if int(r["env_steps"]) == final}
    test = next(r for r in read_csv(run / "tests.csv") if r["point"] == "budget_fraction")
    p, n, n_c = float(test["p"]), int(test["n"]), int(test["n_control"])
    lift_ok = all(v >= 5.0 * base for v in finals.values())
    ok = lift_ok and n >= 9 and n_c >= 9 and p < 0.2
    report(6, ok, f"base rate {base:.4f}; final mean reward "
                  + ", ".join(f"{k} {v:.3f}" for k, v in sorted(finals.items()))
                  + f" (need >= {5 * base:.4f}); whitebox > blackbox at {test['env_steps']} episodes: "
                  f"p={p:.4g} with {n}/{n_c} seeds (expected <0.2)")


# -- 7 --------------------------------------------------------------------------

def test_criterion_7_rarl(report, capsys):
    run = finished_run("rarl", capsys, 7)
    agents = read_csv(run / "agents.csv")
    per_cond = {}
    for a in agents:
        per_cond.setdefault(a["condition"], []).append(a)
    counts = {c: len(v) for c, v in per_cond.items()}
    grids_ok = True
    for c, rows in per_cond.items():
        for a in rows:
            if a["selected"] == "1":
                grids_ok &= len(read_csv(run / a["grid_csv"])) == 64
    corners = read_csv(run / "corners.csv")
    corners_ok = len(corners) == 8 and all(r["majority"] == "1" for r in corners)
    wb_vs_rarl = next(r for r in read_csv(run / "tests.csv") if r["condition"] == "wb_rarl" and r["vs"] == "rarl")
    ok = all(v >= 10 for v in counts.values()) and len(counts) == 3 and grids_ok and corners_ok
    fracs = ", ".join(f"{r['condition']}@{r['corner']} {float(r['fraction_at_least_control']):.2f}" for r in corners)
    report(7, ok, f"agents per condition {counts}; 8x8 grids complete {grids_ok}; corner majority {corners_ok} "
                  f"({fracs}); WB-RARL vs RARL p={float(wb_vs_rarl['p']):.4g} (reported only)")


# -- 8 --------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_rerun_identity(report, tmp_path):
    from advpol.config import load_config
    from advpol.experiment import rerun, run_experiment

    results = {}
    for kind in ("rarl", "lmattack", "attack2p"):
        first = run_experiment(load_config(ROOT / "configs" / f"{kind}_small.cfg"), tmp_path / f"{kind}_a")
        _, bad = rerun(first / "manifest.json", tmp_path / f"{kind}_b")
        n_csv = len(json.loads((first / "manifest.json").read_text())["outputs"])
        results[kind] = (n_csv, bad)
    ok = all(not bad for _, bad in results.values())
    report(8, ok, "; ".join(f"{k}: {n} CSVs, mismatches {bad or 'none'}" for k, (n, bad) in results.items()))
