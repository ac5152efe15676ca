import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from advpol.numkit import (
    AdamState,
    MlpParams,
    adam_step,
    affine_forward,
    categorical_entropy,
    clip_grad_norm,
    gaussian_logprob_entropy,
    init_mlp,
    log_softmax,
    mlp_backward,
    mlp_forward,
    orthogonal,
    softmax,
)

from conftest import numeric_grad, rel_error


def test_affine_vector_and_batch_agree(rng):
    W, b = rng.normal(size=(3, 4)), rng.normal(size=3)
    X = rng.normal(size=(5, 4))
    batch = affine_forward(X, W, b)
    for i in range(5):
        np.testing.assert_allclose(affine_forward(X[i], W, b), batch[i], rtol=0, atol=1e-14)


def test_affine_shape_errors(rng):
    with pytest.raises(ValueError, match="input width"):
        affine_forward(np.ones(3), np.ones((2, 4)), np.ones(2))
    with pytest.raises(ValueError, match="bias shape"):
        affine_forward(np.ones(4), np.ones((2, 4)), np.ones(3))


def test_mlp_params_reject_bad_chain():
    with pytest.raises(ValueError, match="does not chain"):
        MlpParams([np.ones((3, 2)), np.ones((2, 4))], [np.ones(3), np.ones(2)], ["tanh", "tanh"])


@pytest.mark.parametrize("shape", [(4, 4), (3, 7), (7, 3)])
def test_orthogonal_rows_or_columns_are_orthonormal(shape, rng):
    W = orthogonal(shape, 2.0, rng)
    gram = W @ W.T if shape[0] <= shape[1] else W.T @ W
    np.testing.assert_allclose(gram, 4.0 * np.eye(min(shape)), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    sizes=st.lists(st.integers(1, 5), min_size=2, max_size=4),
    batch=st.integers(1, 4),
    seed=st.integers(0, 2**31 - 1),
)
def test_mlp_gradients_match_finite_differences(sizes, batch, seed):
    rng = np.random.default_rng(seed)
    params = init_mlp(sizes, rng, gain=1.0)
    x = rng.normal(size=(batch, sizes[0]))
    upstream = rng.normal(size=(batch, sizes[-1]))

    def loss():
        out, _ = mlp_forward(params, x)
        return float((out * upstream).sum())

    out, cache = mlp_forward(params, x)
    grads, dx = mlp_backward(params, cache, upstream)
    num = numeric_grad(loss, params.arrays() + [x])
    for g, n in zip(grads + [dx], num):
        assert rel_error(g, n) < 1e-6


def test_mlp_forward_names_the_failing_layer(rng):
    params = init_mlp([2, 3, 1], rng)
    params.weights[1][0, 0] = np.nan
    with pytest.raises(FloatingPointError, match="layer 1"):
        mlp_forward(params, np.ones((1, 2)))


def test_softmax_is_stable_and_normalized():
    z = np.array([[1000.0, 1000.0, -1000.0], [0.0, 1.0, 2.0]])
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0)
    np.testing.assert_allclose(p[0], [0.5, 0.5, 0.0], atol=1e-15)
    np.testing.assert_allclose(np.exp(log_softmax(z)), p, atol=1e-15)


def test_categorical_entropy_uniform():
    p = np.full((2, 5), 0.2)
    np.testing.assert_allclose(categorical_entropy(p), math.log(5))


def test_gaussian_logprob_matches_scipy(rng):
    mean = rng.normal(size=(6, 3))
    log_std = rng.normal(size=3) * 0.3
    a = rng.normal(size=(6, 3))
    logp, ent = gaussian_logprob_entropy(mean, log_std, a)
    ref = stats.norm.logpdf(a, mean, np.exp(log_std)).sum(axis=-1)
    np.testing.assert_allclose(logp, ref, rtol=1e-12)
    np.testing.assert_allclose(ent, stats.norm.entropy(0, np.exp(log_std)).sum(), rtol=1e-12)


def test_adam_step_is_pure_and_first_step_is_lr_sized(rng):
    params = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    grads = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    snapshot = [p.copy() for p in params]
    state = AdamState.fresh(params, lr=0.01)
    new, state2 = adam_step(params, grads, state)
    for p, s in zip(params, snapshot):
        np.testing.assert_array_equal(p, s)
    assert state.step == 0 and state2.step == 1
    # bias correction makes the first update lr * sign(g) up to eps
    for p, n, g in zip(params, new, grads):
        np.testing.assert_allclose(p - n, 0.01 * np.sign(g), rtol=1e-6)


def test_adam_rejects_shape_mismatch(rng):
    params = [np.zeros(3)]
    with pytest.raises(ValueError, match="shape mismatch"):
        adam_step(params, [np.zeros(4)], AdamState.fresh(params))


def test_clip_grad_norm():
    g = [np.array([3.0]), np.array([4.0])]
    clipped, norm = clip_grad_norm(g, 1.0)
    assert norm == 5.0
    np.testing.assert_allclose([c[0] for c in clipped], [0.6, 0.8])
    same, _ = clip_grad_norm(g, 10.0)
    assert same[0] is g[0]
