import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advpol.introspect import (
    IntrospectionMode,
    IntrospectionVector,
    RunningMoments,
    compose_obs,
    extract_m,
    extract_m_batch,
    m_dim,
    normalize_m,
    segment_layout,
)
from advpol.policy import GAUSSIAN, make_policy, param_hash


@pytest.fixture
def target(rng):
    return make_policy(12, 5, rng, hidden=64)


def test_mode_widths():
    assert m_dim(IntrospectionMode.BLACKBOX, 5, 64) == 0
    assert m_dim(IntrospectionMode.ACTION_VALUE, 5, 64) == 6
    assert m_dim(IntrospectionMode.LATENT, 5, 64) == 64
    assert m_dim(IntrospectionMode.FULL, 5, 64) == 70
    layout = segment_layout(IntrospectionMode.FULL, 5, 64)
    assert [end for _, _, end in layout] == [1, 6, 70]


def test_parse_rejects_unknown_mode():
    assert IntrospectionMode.parse(" Latent ") is IntrospectionMode.LATENT
    with pytest.raises(ValueError, match="unknown adversary mode"):
        IntrospectionMode.parse("greybox")


def test_blackbox_is_empty_and_compose_is_identity(target, rng):
    obs = rng.normal(size=12)
    m, _ = extract_m(target, obs, "blackbox", rng)
    assert len(m) == 0
    np.testing.assert_array_equal(compose_obs(obs, m), obs)


def test_action_value_with_zero_heads(rng):
    target = make_policy(12, 5, rng, hidden=64)
    params = target.parameters()
    for i in (-4, -3, -2, -1):
        params[i][:] = 0.0
    target = target.with_parameters(params)
    m, _ = extract_m(target, rng.normal(size=12), IntrospectionMode.ACTION_VALUE, rng)
    np.testing.assert_allclose(m.payload, [0.0, 0.2, 0.2, 0.2, 0.2, 0.2])


def test_full_contains_other_modes_and_composes_to_82(target, rng):
    obs = rng.normal(size=12)
    full, rec = extract_m(target, obs, "full", np.random.default_rng(1))
    av, _ = extract_m(target, obs, "action_value", np.random.default_rng(1))
    lat, _ = extract_m(target, obs, "latent", np.random.default_rng(1))
    assert full.boundaries == (1, 6, 70)
    np.testing.assert_array_equal(full.payload[:6], av.payload)
    np.testing.assert_array_equal(full.segment("latent"), lat.payload)
    assert len(compose_obs(obs, full)) == 82


def test_extraction_is_read_only_and_shares_the_forward(target, rng):
    before = param_hash(target)
    obs = rng.normal(size=12)
    m, rec = extract_m(target, obs, "full", np.random.default_rng(3))
    assert param_hash(target) == before
    np.testing.assert_array_equal(m.segment("action"), rec.action_dist)
    # the action the target executes comes from the same draw as a plain forward
    from advpol.policy import policy_forward

    assert policy_forward(target, obs, np.random.default_rng(3)).sampled_action == rec.sampled_action


def test_latent_width_mismatch_raises(target, rng):
    with pytest.raises(ValueError, match="latent width"):
        extract_m(target, np.zeros(12), "latent", rng, expected_hidden=32)


def test_batch_extraction_matches_single(target, rng):
    X = rng.normal(size=(4, 12))
    rows = extract_m_batch(target, target.forward(X), IntrospectionMode.FULL)
    for i in range(4):
        m, _ = extract_m(target, X[i], "full", rng)
        np.testing.assert_allclose(rows[i], m.payload, atol=1e-14)


def test_action_latent_for_gaussian_target(rng):
    t = make_policy(2, 1, rng, hidden=8, kind=GAUSSIAN)
    out = t.forward(np.ones((3, 2)))
    rows = extract_m_batch(t, out, IntrospectionMode.ACTION_LATENT)
    assert rows.shape == (3, 1 + 8)
    np.testing.assert_array_equal(rows[:, 0], out.head[:, 0])


def test_normalize_examples():
    stats = RunningMoments(2)
    np.testing.assert_array_equal(normalize_m(np.array([3.0, -4.0]), stats), [3.0, -4.0])
    stats.count, stats.mean, stats.var = 10, np.array([1.0, 7.0]), np.array([4.0, 0.0])
    out = normalize_m(np.array([5.0, 7.0]), stats)
    np.testing.assert_allclose(out, [2.0, 0.0])
    assert normalize_m(np.array([1e9, 7.0]), stats)[0] == 10.0


@settings(max_examples=30, deadline=None)
@given(chunks=st.lists(st.integers(1, 20), min_size=1, max_size=6), seed=st.integers(0, 1000))
def test_running_moments_match_batch_statistics(chunks, seed):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(sum(chunks), 3)) * [1.0, 5.0, 0.1] + [0.0, -2.0, 9.0]
    rm = RunningMoments(3)
    start = 0
    for c in chunks:
        rm.update(data[start:start + c])
        start += c
    np.testing.assert_allclose(rm.mean, data.mean(axis=0), atol=1e-10)
    np.testing.assert_allclose(rm.var, data.var(axis=0), atol=1e-10)


def test_frozen_stats_do_not_move():
    rm = RunningMoments(1)
    rm.update(np.array([[1.0], [3.0]]))
    rm.frozen = True
    rm.update(np.array([[100.0]]))
    assert rm.count == 2 and rm.mean[0] == 2.0


def test_compose_without_normalization_is_raw(rng):
    m = IntrospectionVector(IntrospectionMode.LATENT, np.array([50.0, -50.0]), (("latent", 0, 2),))
    stats = RunningMoments(2)
    stats.update(rng.normal(size=(10, 2)))
    np.testing.assert_array_equal(compose_obs(np.zeros(1), m, stats, normalize=False), [0.0, 50.0, -50.0])
    assert np.all(np.abs(compose_obs(np.zeros(1), m, stats, normalize=True)[1:]) <= 10.0)
