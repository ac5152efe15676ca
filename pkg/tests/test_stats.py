import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advpol.stats import SampleGroup, aggregate_curves, read_curve_csv, sem, welch_t_one_sided

# (a, b, t, df, p) from scripts/make_welch_oracle.py (mpmath, 50 digits)
WELCH_ORACLE = [
    ([1.1, 1.2, 1.3], [0.1, 0.2, 0.3], 12.24744871391589, 4.0, 0.00012760837472096337),
    ([0.1, 0.2, 0.3], [1.1, 1.2, 1.3], -12.24744871391589, 4.0, 0.99987239162527904),
    ([1.0, 2.0, 3.0, 4.0], [1.5, 2.5, 3.5], 0.0, 4.9591836734693878, 0.5),
    ([5.2, 4.8, 6.1, 5.5, 5.0], [4.1, 3.9, 4.6, 5.2, 4.4, 4.0], 3.1687927098357469, 8.4768651805833101,
     0.0061387700824221123),
    ([0.0, 0.0, 1.0], [0.0, 1.0, 1.0, 1.0], -1.0, 4.032258064516129, 0.81326012650667238),
    ([10.0, 12.0, 9.0, 11.0, 30.0], [10.0, 10.5, 9.5, 10.2], 1.1047526266230992, 4.0228435481500931,
     0.16546037456771967),
    ([-3.0, -1.0, -2.0, -2.5], [-2.0, -2.1, -1.9], -0.29012942659282973, 3.1091579863944157, 0.60500129187932744),
    ([2.0, 2.0, 2.0, 2.1], [1.0, 3.0, 2.0, 2.5, 1.5, 2.2, 1.8], 0.10035906758257156, 6.1214467664465763,
     0.46163284617080579),
    ([7.5, 6.0, 8.25, 7.0, 6.5, 7.75, 8.0, 6.25], [6.0, 5.5, 7.0, 6.25, 5.75], 2.6794553054699093,
     10.816284152059681, 0.010856170393344402),
    ([0.31, 0.29, 0.35, 0.30], [0.28, 0.27, 0.30, 0.26, 0.29, 0.31], 1.8083888603589302, 5.0225561866456505,
     0.065039918848983758),
]


@pytest.mark.parametrize("a,b,t,df,p", WELCH_ORACLE)
def test_welch_matches_oracle(a, b, t, df, p):
    t2, df2, p2 = welch_t_one_sided(a, b)
    assert abs(p2 - p) <= 1e-6
    assert t2 == pytest.approx(t, abs=1e-9)
    assert df2 == pytest.approx(df, rel=1e-9)


def test_sem_examples():
    assert sem([1, 1, 1, 1]) == 0.0
    assert sem([0, 2]) == pytest.approx(1.0)
    assert sem([1, 2, 3]) == pytest.approx(1 / math.sqrt(3))
    with pytest.raises(ValueError):
        sem([4.0])


def test_sample_group_validation():
    with pytest.raises(ValueError):
        SampleGroup("x", [])
    with pytest.raises(ValueError):
        SampleGroup("x", [1.0, float("nan")])
    assert sem(SampleGroup("x", [0.0, 2.0])) == pytest.approx(1.0)


def test_welch_conventions():
    assert welch_t_one_sided([1, 2, 3], [1, 2, 3])[2] == 0.5
    assert welch_t_one_sided([2, 2], [2, 2]) == (0.0, 2.0, 0.5)
    assert welch_t_one_sided([3, 3], [2, 2])[2] == 0.0
    with pytest.raises(ValueError):
        welch_t_one_sided([1.0], [1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(
    a=st.lists(st.floats(-100, 100), min_size=2, max_size=8),
    b=st.lists(st.floats(-100, 100), min_size=2, max_size=8),
)
def test_welch_swap_symmetry_and_permutation_invariance(a, b):
    if np.var(a) + np.var(b) < 1e-6:
        return
    _, _, p = welch_t_one_sided(a, b)
    _, _, q = welch_t_one_sided(b, a)
    assert p + q == pytest.approx(1.0, abs=1e-12)
    _, _, pr = welch_t_one_sided(a[::-1], b[::-1])
    assert pr == pytest.approx(p, abs=1e-12)


def test_aggregate_curves():
    rows = aggregate_curves([{0: 1.0, 10: 2.0}, {0: 1.0, 10: 2.0}])
    assert [r["sem"] for r in rows] == [0.0, 0.0]
    single = aggregate_curves([{0: 1.0, 10: 3.0}])
    assert [r["mean"] for r in single] == [1.0, 3.0] and all(math.isnan(r["sem"]) for r in single)
    with pytest.raises(ValueError, match=r"runs \[1\]"):
        aggregate_curves([{0: 1.0, 10: 2.0}, {0: 1.0, 20: 2.0}])


def test_read_curve_csv(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("env_steps,net_points\n0,1.5\n50000,-2.0\n")
    assert read_curve_csv(p) == {0: 1.5, 50000: -2.0}
