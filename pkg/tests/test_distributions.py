import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from hierflow.distributions import (
    RngStream,
    draw_beta,
    draw_categorical,
    draw_dirichlet,
    draw_gamma,
    draw_inverse_wishart,
    draw_log_gamma,
    draw_mvn,
    draw_wishart,
)
from hierflow.errors import NotPositiveDefiniteError, NumericalError

V = np.array([[2.0, 0.5, 0.1], [0.5, 1.0, -0.2], [0.1, -0.2, 0.7]])


def test_streams_are_reproducible_and_distinct():
    a = RngStream(3, 0).normal(5)
    np.testing.assert_array_equal(a, RngStream(3, 0).normal(5))
    assert not np.array_equal(a, RngStream(3, 1).normal(5))
    assert not np.array_equal(a, RngStream(4, 0).normal(5))


@pytest.mark.parametrize("shape", [0.05, 0.7, 1.0, 3.5])
def test_gamma_matches_scipy(shape):
    x = draw_gamma(np.full(20000, shape), RngStream(1))
    assert stats.kstest(x, stats.gamma(shape).cdf).pvalue > 1e-3


def test_log_gamma_tiny_shape_is_finite():
    lg = draw_log_gamma(np.full(1000, 1e-3), RngStream(2))
    assert np.all(np.isfinite(lg))


def test_gamma_rejects_nonpositive_shape():
    with pytest.raises(ValueError):
        draw_gamma([1.0, 0.0], RngStream(0))


def test_mvn_moments():
    x = draw_mvn(np.array([1.0, -1.0, 0.5]), V, 3, size=40000)
    np.testing.assert_allclose(x.mean(0), [1.0, -1.0, 0.5], atol=0.03)
    np.testing.assert_allclose(np.cov(x, rowvar=False), V, atol=0.05)


def test_wishart_mean_and_spd():
    R = draw_wishart(np.broadcast_to(V, (20000, 3, 3)), 6.0, 4)
    np.testing.assert_allclose(R.mean(0), 6.0 * V, rtol=0.03, atol=0.05)
    assert np.all(np.linalg.eigvalsh(R) > 0)


def test_wishart_scalar_marginal_is_scaled_chisq():
    R = draw_wishart(np.broadcast_to(V, (5000, 3, 3)), 5.0, 9)
    assert stats.kstest(R[:, 0, 0] / V[0, 0], stats.chi2(5).cdf).pvalue > 1e-3


def test_inverse_wishart_mean():
    R = draw_inverse_wishart(np.broadcast_to(V, (40000, 3, 3)), 9.0, 5)
    np.testing.assert_allclose(R.mean(0), V / (9.0 - 3 - 1), rtol=0.03, atol=0.01)


def test_inverse_wishart_d1_is_inverse_gamma():
    R = draw_inverse_wishart(np.full((5000, 1, 1), 2.0), 7.0, 6)[:, 0, 0]
    assert stats.kstest(R, stats.invgamma(3.5, scale=1.0).cdf).pvalue > 1e-3


@given(st.integers(0, 10**6), st.floats(3.0, 40.0))
def test_inverse_wishart_draws_are_spd(seed, nu):
    R = draw_inverse_wishart(V, nu, seed)
    np.testing.assert_allclose(R, R.T, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(R) > 0)


def test_wishart_family_input_errors():
    with pytest.raises(ValueError):
        draw_wishart(V, 2.0, 0)
    with pytest.raises(NotPositiveDefiniteError):
        draw_inverse_wishart(-V, 8.0, 0)


def test_dirichlet_mean_and_simplex():
    alpha = np.array([0.5, 1.0, 3.0])
    P = draw_dirichlet(np.broadcast_to(alpha, (30000, 3)), 7)
    np.testing.assert_allclose(P.sum(1), 1.0, atol=1e-12)
    np.testing.assert_allclose(P.mean(0), alpha / alpha.sum(), atol=0.01)


def test_dirichlet_small_alpha_no_nan():
    P = draw_dirichlet(np.full((100, 4), 1e-3), 8)
    assert np.all(np.isfinite(P)) and np.allclose(P.sum(1), 1.0)


def test_beta_matches_scipy():
    x = np.array([draw_beta(2.0, 5.0, RngStream(11, i)) for i in range(3000)])
    assert stats.kstest(x, stats.beta(2.0, 5.0).cdf).pvalue > 1e-3


def test_categorical_frequencies_and_shift_invariance():
    lw = np.log([0.1, 0.6, 0.3])
    rng = RngStream(12)
    draws = np.array([draw_categorical(lw, rng) for _ in range(20000)])
    np.testing.assert_allclose(np.bincount(draws, minlength=3) / draws.size, [0.1, 0.6, 0.3], atol=0.015)
    assert draw_categorical(lw, RngStream(5)) == draw_categorical(lw + 100.0, RngStream(5))


def test_categorical_errors():
    with pytest.raises(NumericalError):
        draw_categorical([-np.inf, -np.inf], 0)
    with pytest.raises(NumericalError):
        draw_categorical([0.0, np.nan], 0)
    with pytest.raises(ValueError):
        draw_categorical([], 0)
    assert draw_categorical([-np.inf, 0.0], 0) == 1
