import numpy as np
import pytest

from advpol.policy import (
    CATEGORICAL,
    GAUSSIAN,
    checkpoint_bytes,
    deterministic_action,
    load_checkpoint,
    make_policy,
    net_from_bytes,
    param_hash,
    policy_forward,
    save_checkpoint,
)

from conftest import numeric_grad, rel_error


def test_forward_shapes_and_near_uniform_init(rng):
    net = make_policy(12, 5, rng, hidden=64)
    out = net.forward(rng.normal(size=(7, 12)))
    assert out.head.shape == (7, 5)
    assert out.value.shape == (7,)
    assert out.latents.shape == (7, 64)
    # head gain 0.01 keeps the initial policy close to uniform
    np.testing.assert_allclose(out.probs, 0.2, atol=0.02)


def test_zero_heads_give_exact_uniform(rng):
    net = make_policy(4, 5, rng, hidden=8)
    params = net.parameters()
    params[-4][:] = 0.0
    out = net.with_parameters(params).forward(np.ones((1, 4)))
    np.testing.assert_array_equal(out.probs, np.full((1, 5), 0.2))


def test_forward_rejects_wrong_width(rng):
    net = make_policy(3, 2, rng, hidden=4)
    with pytest.raises(ValueError, match="input width"):
        net.forward(np.ones((1, 4)))


@pytest.mark.parametrize("kind", [CATEGORICAL, GAUSSIAN])
def test_backward_matches_finite_differences(kind, rng):
    net = make_policy(3, 2, rng, hidden=5, kind=kind, head_gain=1.0)
    x = rng.normal(size=(4, 3))
    w_head, w_val, w_std = rng.normal(size=(4, 2)), rng.normal(size=4), rng.normal(size=2)
    params = net.parameters()

    def loss():
        out = net.with_parameters(params).forward(x)
        total = float((out.head * w_head).sum() + (out.value * w_val).sum())
        if kind == GAUSSIAN:
            total += float((params[-1] * w_std).sum())
        return total

    out = net.forward(x)
    grads = net.backward(out, w_head, w_val, w_std if kind == GAUSSIAN else None)
    for g, n in zip(grads, numeric_grad(loss, params)):
        assert rel_error(g, n) < 1e-6


def test_sampling_is_seeded(rng):
    net = make_policy(3, 4, rng, hidden=8, head_gain=1.0)
    x = rng.normal(size=(50, 3))
    out = net.forward(x)
    a1 = net.sample(out, np.random.default_rng(7))
    a2 = net.sample(out, np.random.default_rng(7))
    np.testing.assert_array_equal(a1, a2)


def test_mode_takes_first_of_tied_maxima(rng):
    net = make_policy(2, 3, rng, hidden=4)
    params = net.parameters()
    params[-4][:] = 0.0
    params[-3][:] = [1.0, 1.0, 0.0]
    net = net.with_parameters(params)
    assert deterministic_action(net, np.zeros(2)) == 0


def test_policy_forward_record(rng):
    net = make_policy(3, 5, rng, hidden=6)
    rec = policy_forward(net, np.ones(3), np.random.default_rng(0))
    assert rec.action_dist.shape == (5,)
    assert 0 <= rec.sampled_action < 5
    assert np.isclose(rec.logp, np.log(rec.action_dist[rec.sampled_action]))
    with pytest.raises(ValueError):
        policy_forward(net, np.ones((2, 3)), np.random.default_rng(0))


@pytest.mark.parametrize("kind", [CATEGORICAL, GAUSSIAN])
def test_checkpoint_roundtrip_is_bit_exact(kind, rng, tmp_path):
    net = make_policy(5, 3, rng, hidden=7, kind=kind, init_log_std=-0.3)
    save_checkpoint(net, tmp_path / "n.ckpt")
    back = load_checkpoint(tmp_path / "n.ckpt")
    assert param_hash(back) == param_hash(net)
    assert back.kind == kind
    x = rng.normal(size=(3, 5))
    np.testing.assert_array_equal(back.forward(x).head, net.forward(x).head)


def test_checkpoint_rejects_garbage(rng):
    blob = checkpoint_bytes(make_policy(2, 2, rng, hidden=3))
    with pytest.raises(ValueError):
        net_from_bytes(b"NOTANET" + blob[7:])
    with pytest.raises(ValueError):
        net_from_bytes(blob[:-8])


def test_param_hash_changes_with_any_weight(rng):
    net = make_policy(2, 2, rng, hidden=3)
    params = [p.copy() for p in net.parameters()]
    params[0][0, 0] += 1e-12
    assert param_hash(net.with_parameters(params)) != param_hash(net)
