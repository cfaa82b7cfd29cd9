import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dip_oracle import dip_exact
from hierflow.dip import dip_null_samples, dip_statistic, dip_test


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(4, 201))
        kind = rng.integers(3)
        if kind == 0:
            x = rng.normal(size=n)
        elif kind == 1:
            x = np.r_[rng.normal(0, 1, n // 2), rng.normal(4, 1, n - n // 2)]
        else:
            x = rng.integers(0, 15, n).astype(float)  # ties
        assert dip_statistic(x) == pytest.approx(dip_exact(x), abs=1e-12)


def test_weighted_matches_brute_force_oracle():
    rng = np.random.default_rng(1)
    for _ in range(40):
        n = int(rng.integers(4, 80))
        x = rng.normal(size=n)
        w = rng.gamma(1.0, size=n)
        assert dip_statistic(x, w) == pytest.approx(dip_exact(x, w), abs=1e-12)


@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=40, unique=True))
def test_dip_bounds(xs):
    # the 1/4 ceiling holds for distinct points; a heavy tied atom can exceed it
    x = np.array(xs)
    d = dip_statistic(x)
    assert 1.0 / (2 * x.size) - 1e-15 <= d <= 0.25 + 1e-15


def test_unit_weights_equal_unweighted():
    x = np.random.default_rng(2).normal(size=50)
    assert dip_statistic(x, np.full(50, 3.0)) == pytest.approx(dip_statistic(x), abs=1e-15)


def test_bimodal_rejects():
    rng = np.random.default_rng(3)
    x = np.r_[rng.normal(0, 1, 250), rng.normal(8, 1, 250)]
    assert dip_test(x, B=1000, rng=4) < 0.001


def test_uniform_grid_accepts():
    assert dip_test(np.linspace(0, 1, 100), B=1000, rng=5) > 0.5


def test_all_equal_points():
    x = np.full(10, 2.5)
    assert dip_statistic(x) == pytest.approx(1 / 20, abs=1e-15)
    assert dip_test(x) == 1.0


def test_too_few_points():
    with pytest.raises(ValueError):
        dip_statistic([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        dip_test([1.0, 2.0, 3.0, 4.0], weights=[1, 1, 1, 0])


def test_invalid_weights():
    with pytest.raises(ValueError):
        dip_statistic(np.arange(5.0), [1, 1, -1, 1, 1])
    with pytest.raises(ValueError):
        dip_statistic(np.arange(5.0), [1, 1, 1])


def test_null_samples_deterministic_and_sane():
    a = dip_null_samples(50, 20, 7)
    np.testing.assert_array_equal(a, dip_null_samples(50, 20, 7))
    assert np.all((a >= 1 / 100) & (a <= 0.25))
