import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advpol.envs import RUNNER_OBS_DIM, RunnerConfig
from advpol.introspect import IntrospectionMode, RunningMoments
from advpol.policy import GAUSSIAN, make_policy, param_hash
from advpol.ppo import PpoConfig
from advpol.rarl import (
    PerturbationPolicySet,
    RarlCondition,
    RarlConfig,
    RarlExperiment,
    RarlRunResult,
    domain_shift_grid,
    evaluate_runner,
    perturb_action,
    rarl_train,
    select_top_half,
)


def test_perturb_action_examples():
    assert perturb_action(0.8, 1.0, 0.5) == 1.0
    assert perturb_action(0.2, -1.0, 0.5) == pytest.approx(-0.3)
    assert perturb_action(-1.0, -1.0, 0.5) == -1.0
    with pytest.raises(ValueError):
        perturb_action(0.0, 1.5, 0.5)


@settings(max_examples=200, deadline=None)
@given(a=st.floats(-1, 1), b=st.floats(-1, 1), delta=st.floats(0, 2))
def test_perturbation_never_leaves_the_delta_ball(a, b, delta):
    out = float(perturb_action(a, b, delta))
    assert -1.0 <= out <= 1.0
    assert abs(out - a) <= delta + 1e-12


def test_condition_parsing():
    assert RarlCondition.parse("WB-RARL") is RarlCondition.WB_RARL
    assert RarlCondition.parse("control") is RarlCondition.RL_CONTROL
    assert RarlCondition.WB_RARL.introspection is IntrospectionMode.ACTION_LATENT
    with pytest.raises(ValueError):
        RarlCondition.parse("adversarial")


def tiny_exp(delta=0.5, n_adv=2) -> RarlExperiment:
    return RarlExperiment(
        seed=0,
        runner=RunnerConfig(max_steps=50),
        rarl=RarlConfig(agents=2, steps=512, delta=delta, n_adversaries=n_adv, hidden=8, adv_hidden=8,
                        n_envs=4, eval_interval=256, eval_episodes=4),
        ppo=PpoConfig(steps=256, minibatch=64, epochs=2, ent_coef=0.0, lr=3e-4),
    )


def test_zero_delta_rarl_matches_control():
    ctrl = rarl_train("rl_control", tiny_exp(), 0)
    rarl = rarl_train("rarl", tiny_exp(delta=0.0), 0)
    assert param_hash(ctrl.target) == param_hash(rarl.target)
    assert ctrl.eval_free == rarl.eval_free


def test_whitebox_adversary_sees_target_internals():
    res = rarl_train("wb_rarl", tiny_exp(), 0)
    assert len(res.adversaries) == 2
    assert res.adversaries[0].obs_dim == RUNNER_OBS_DIM + 1 + 8
    assert rarl_train("rarl", tiny_exp(), 0).adversaries[0].obs_dim == RUNNER_OBS_DIM
    assert res.steps == [0, 256, 512]


def test_training_is_deterministic():
    a = rarl_train("wb_rarl", tiny_exp(), 1)
    b = rarl_train("wb_rarl", tiny_exp(), 1)
    assert param_hash(a.target) == param_hash(b.target)
    assert a.eval_adv == b.eval_adv


def test_grid_shape_and_multipliers(rng):
    net = make_policy(RUNNER_OBS_DIM, 1, rng, hidden=4, kind=GAUSSIAN)
    rows = domain_shift_grid(net, RunnerConfig(max_steps=20), 0.6, 1.6, 8, 20, seed=3)
    assert len(rows) == 64
    assert rows[0]["frictionMult"] == pytest.approx(0.6) and rows[-1]["massMult"] == pytest.approx(1.6)
    assert all(r["n"] == 20 for r in rows)
    with pytest.raises(ValueError):
        domain_shift_grid(net, RunnerConfig(max_steps=20), episodes=5)


def test_grid_cells_match_single_condition_eval(rng):
    net = make_policy(RUNNER_OBS_DIM, 1, rng, hidden=4, kind=GAUSSIAN)
    cfg = RunnerConfig(max_steps=20)
    rows = domain_shift_grid(net, cfg, 1.0, 1.0, 1, 20, seed=3)
    # a one-cell grid is the same seeded evaluation
    direct = evaluate_runner(net, cfg, 1.0, 1.0, 20, 3)
    assert rows[0]["mean"] == pytest.approx(direct.mean(), abs=1e-12)


def test_full_push_adversary_lowers_return(rng):
    net = make_policy(RUNNER_OBS_DIM, 1, rng, hidden=4, kind=GAUSSIAN)
    params = net.parameters()
    params[-5][:] = 0.0
    params[-4][:] = 1.0  # mean action 1 everywhere
    net = net.with_parameters(params)
    brake = make_policy(RUNNER_OBS_DIM, 1, rng, hidden=4, kind=GAUSSIAN, init_log_std=-20.0)
    bp = brake.parameters()
    bp[-5][:] = 0.0
    bp[-4][:] = -50.0  # tanh -> -1
    ens = PerturbationPolicySet([brake.with_parameters(bp)], 0.5, IntrospectionMode.BLACKBOX, None, False)
    cfg = RunnerConfig(max_steps=30)
    free = evaluate_runner(net, cfg, 1.0, 1.0, 4, 0).mean()
    hit = evaluate_runner(net, cfg, 1.0, 1.0, 4, 0, ens).mean()
    assert hit < free


def fake(seed, final):
    return RarlRunResult(RarlCondition.RARL, seed, None, [], [0], [final], [final])


def test_selection_orders_by_eval_then_seed():
    ranked = select_top_half([fake(0, 1.0), fake(1, 3.0), fake(2, 3.0), fake(3, 2.0)])
    assert [(r.seed, k) for r, k in ranked] == [(1, 1), (2, 2), (3, 3), (0, 4)]


def test_perturbation_set_rejects_nonpositive_delta(rng):
    net = make_policy(RUNNER_OBS_DIM, 1, rng, hidden=4, kind=GAUSSIAN)
    with pytest.raises(ValueError):
        PerturbationPolicySet([net], 0.0, IntrospectionMode.BLACKBOX, RunningMoments(0))
