import numpy as np
import pytest

from hierflow.em import em_baseline, kmeans_pp
from hierflow.distributions import RngStream
from hierflow.errors import DataError


def test_single_gaussian_mle():
    rng = np.random.default_rng(0)
    Y = rng.multivariate_normal([1.0, -1.0], [[2.0, 0.5], [0.5, 1.0]], 500)
    res = em_baseline(Y, 1, rng=1, restarts=2)
    np.testing.assert_allclose(res.means[0], Y.mean(0), atol=1e-6)
    np.testing.assert_allclose(res.covs[0], np.cov(Y, rowvar=False, ddof=0), atol=1e-6)
    assert res.weights[0] == pytest.approx(1.0)


def test_two_separated_clusters():
    rng = np.random.default_rng(1)
    Y = np.vstack([rng.normal([0, 0], 0.5, (300, 2)), rng.normal([5, 5], 0.5, (300, 2))])
    res = em_baseline(Y, 2, rng=2)
    means = res.means[np.argsort(res.means[:, 0])]
    np.testing.assert_allclose(means, [[0, 0], [5, 5]], atol=0.1)
    assert res.converged
    lab = res.labels(Y)
    assert len(set(lab[:300])) == 1 and len(set(lab[300:])) == 1
    np.testing.assert_allclose(res.responsibilities(Y).sum(1), 1.0)


def test_loglik_monotone():
    rng = np.random.default_rng(2)
    Y = np.vstack([rng.normal(0, 1, (200, 2)), rng.normal(1.5, 0.7, (200, 2))])
    res = em_baseline(Y, 3, rng=3, restarts=3)
    assert np.all(np.diff(res.history) >= -1e-9)
    assert len(res.restart_logliks) == 3
    assert res.loglik == pytest.approx(max(res.restart_logliks))


def test_too_few_cells():
    with pytest.raises(DataError):
        em_baseline(np.zeros((4, 2)), 2)


def test_degenerate_component_restarts_with_ridge():
    # a cluster of identical points makes the plain covariance singular
    rng = np.random.default_rng(4)
    Y = np.vstack([np.tile([3.0, 3.0], (30, 1)), rng.normal(0, 1, (100, 2))])
    res = em_baseline(Y, 2, rng=5, restarts=2)
    assert np.all(np.isfinite(res.means))
    assert res.n_jitter_restarts >= 1


def test_deterministic_and_kmeans_seeds():
    rng = np.random.default_rng(6)
    Y = rng.normal(size=(100, 2))
    a = em_baseline(Y, 2, rng=7, restarts=2)
    b = em_baseline(Y, 2, rng=7, restarts=2)
    np.testing.assert_array_equal(a.means, b.means)
    c = kmeans_pp(Y, 3, RngStream(0))
    assert c.shape == (3, 2)
    assert all(any(np.array_equal(ci, y) for y in Y) for ci in c)
