import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from hierflow.errors import ConfigError, DataError, NotPositiveDefiniteError
from hierflow.merge import (
    GaussianSummary,
    MergeConfig,
    MergeStep,
    bhattacharyya,
    fisher_coordinate,
    gaussian_approx,
    hard_weights,
    merge_clusters,
    population_quantiles,
    replay,
    soft_cluster_weights,
    weighted_quantile,
)
from hierflow.model import Dataset


def G(m, c, w=1.0):
    return GaussianSummary(np.atleast_1d(m), np.atleast_2d(c), w)


# ---------------------------------------------------------------------------
# Bhattacharyya distance


def test_bhattacharyya_analytic_cases():
    g = G([0.3, -1.0], [[2.0, 0.4], [0.4, 1.0]])
    assert bhattacharyya(g, g) == 0.0
    assert abs(bhattacharyya(G(0.0, 1.0), G(2.0, 1.0)) - 0.5) <= 1e-14


def _bc_quadrature(m1, s1, m2, s2):
    f = lambda y: np.sqrt(norm.pdf(y, m1, s1) * norm.pdf(y, m2, s2))  # noqa: E731
    lo = min(m1 - 12 * s1, m2 - 12 * s2)
    hi = max(m1 + 12 * s1, m2 + 12 * s2)
    val, _ = quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
    return -np.log(val)


def test_bhattacharyya_matches_quadrature():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m1, m2 = rng.uniform(-3, 3, 2)
        s1, s2 = rng.uniform(0.3, 2.5, 2)
        got = bhattacharyya(G(m1, s1**2), G(m2, s2**2))
        assert abs(got - _bc_quadrature(m1, s1, m2, s2)) < 1e-6


def _random_spd(seed, d):
    A = np.random.default_rng(seed).normal(size=(d, d))
    return A @ A.T + 0.2 * np.eye(d)


@given(st.integers(0, 10**6), st.integers(1, 4))
def test_bhattacharyya_symmetric_nonnegative(seed, d):
    rng = np.random.default_rng(seed)
    g1 = G(rng.normal(size=d), _random_spd(seed + 1, d))
    g2 = G(rng.normal(size=d), _random_spd(seed + 2, d))
    a, b = bhattacharyya(g1, g2), bhattacharyya(g2, g1)
    assert abs(a - b) <= 1e-14 * max(1.0, abs(a))
    assert a > 0


def test_bhattacharyya_rejects_non_spd():
    with pytest.raises(NotPositiveDefiniteError):
        bhattacharyya(G([0, 0], [[1, 2], [2, 1]]), G([0, 0], np.eye(2)))


# ---------------------------------------------------------------------------
# Fisher coordinate


def test_fisher_identity_covariances():
    f = fisher_coordinate(G([3.0, 4.0], np.eye(2)), G([0.0, 0.0], np.eye(2)))
    np.testing.assert_allclose(f, [0.6, 0.8], atol=1e-15)


def test_fisher_swap_flips_sign():
    g1, g2 = G([1.0, 2.0], [[2.0, 0.3], [0.3, 0.5]]), G([0.0, -1.0], [[1.0, -0.2], [-0.2, 1.5]])
    np.testing.assert_allclose(fisher_coordinate(g1, g2), -fisher_coordinate(g2, g1), atol=1e-15)


def test_fisher_matches_least_squares_discriminant():
    # with equal class sizes, regressing a +-1 label on the cells gives a slope along
    # (S1 + S2)^{-1} (m1 - m2) with S the per-class population covariances
    rng = np.random.default_rng(1)
    A = rng.multivariate_normal([1.0, 0.5], [[3.0, 1.2], [1.2, 1.0]], 400)
    B = rng.multivariate_normal([-0.5, 0.0], [[0.5, -0.1], [-0.1, 2.0]], 400)
    X = np.column_stack([np.ones(800), np.vstack([A, B])])
    y = np.r_[np.ones(400), -np.ones(400)]
    beta = np.linalg.lstsq(X, y, rcond=None)[0][1:]
    beta /= np.linalg.norm(beta)
    g1 = G(A.mean(0), np.cov(A, rowvar=False, ddof=0))
    g2 = G(B.mean(0), np.cov(B, rowvar=False, ddof=0))
    np.testing.assert_allclose(fisher_coordinate(g1, g2), beta, atol=1e-8)


def test_fisher_equal_means_error():
    with pytest.raises(ValueError):
        fisher_coordinate(G([1.0, 1.0], np.eye(2)), G([1.0, 1.0], 2 * np.eye(2)))


# ---------------------------------------------------------------------------
# soft weights and Gaussian approximations


def _one_hot(labels, m):
    w = np.zeros((len(labels), m))
    w[np.arange(len(labels)), labels] = 1.0
    return w


def test_gaussian_approx_hard_singleton_and_pooled():
    rng = np.random.default_rng(2)
    Y = rng.normal(size=(60, 2))
    lab = np.repeat([1, 2, 0], [25, 30, 5])
    ds = Dataset([Y])
    w = [_one_hot(lab, 3)]
    g = gaussian_approx([0], w, ds)
    np.testing.assert_allclose(g.mean, Y[:25].mean(0), atol=1e-14)
    np.testing.assert_allclose(g.cov, np.cov(Y[:25], rowvar=False, ddof=0), atol=1e-14)
    assert g.weight == pytest.approx(25 / 60)
    # pooled two-group identity: total = within + between
    both = gaussian_approx([0, 1], w, ds)
    A, B = Y[:25], Y[25:55]
    m = (25 * A.mean(0) + 30 * B.mean(0)) / 55
    within = (25 * np.cov(A, rowvar=False, ddof=0) + 30 * np.cov(B, rowvar=False, ddof=0)) / 55
    between = (25 * np.outer(A.mean(0) - m, A.mean(0) - m) + 30 * np.outer(B.mean(0) - m, B.mean(0) - m)) / 55
    np.testing.assert_allclose(both.mean, m, atol=1e-14)
    np.testing.assert_allclose(both.cov, within + between, atol=1e-13)


def test_gaussian_approx_scale_invariant_and_empty_error():
    rng = np.random.default_rng(3)
    Y = rng.normal(size=(40, 2))
    w = rng.dirichlet(np.ones(3), 40)
    ds = Dataset([Y])
    a = gaussian_approx([1], [w], ds)
    b = gaussian_approx([1], [w * 7.0], ds)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-14)
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-14)
    w[:, 2] = 0
    with pytest.raises(DataError):
        gaussian_approx([1], [w], ds)


class _FakeTrace:
    def __init__(self, counts, n):
        self.soft_counts, self.n_soft = counts, n

    def soft_weights(self, j):
        return self.soft_counts[j] / float(self.n_soft)


def test_soft_cluster_weights_rows_and_errors():
    counts = [np.array([[0, 10, 0], [2, 3, 5]]), np.array([[10, 0, 0]])]
    w = soft_cluster_weights(_FakeTrace(counts, 10))
    assert w[0][0, 1] == 1.0
    np.testing.assert_allclose(np.concatenate(w).sum(1), 1.0)
    with pytest.raises(DataError):
        soft_cluster_weights(_FakeTrace([], 0))
    with pytest.raises(DataError):
        soft_cluster_weights(_FakeTrace(counts, 10), Dataset([np.zeros((3, 1)), np.zeros((1, 1))]))
    h = hard_weights(w)
    assert h[0][1].tolist() == [0.0, 0.0, 1.0]


# ---------------------------------------------------------------------------
# merging


def _two_cluster_problem(rng, m1, c1, n1, m2, c2, n2):
    Y = np.vstack([rng.multivariate_normal(m1, c1, n1), rng.multivariate_normal(m2, c2, n2)])
    lab = np.r_[np.ones(n1, int), np.full(n2, 2)]
    return Dataset([Y]), [_one_hot(lab, 3)]


def test_identical_summaries_merge_under_d1():
    g = G([0.0, 0.0], np.eye(2), 0.5)
    ds = Dataset([np.zeros((4, 2))])
    w = [np.full((4, 3), 1 / 3)]
    res = merge_clusters([g, g], w, ds)
    assert res.n_populations == 1
    assert res.merge_log[0].criterion == "d1" and res.merge_log[0].distance == 0.0


def test_skewed_population_pieces_merge():
    rng = np.random.default_rng(4)
    ds, w = _two_cluster_problem(rng, [0, 0], np.eye(2), 800, [0.6, 0.3], [[1.4, 0.2], [0.2, 1.1]], 500)
    res = merge_clusters(None, w, ds, MergeConfig(dip_bootstrap=200))
    assert res.merge_log[0].distance < 0.2
    assert res.partition.tolist() == [0, 0]


def test_dense_inside_sparse_not_merged():
    rng = np.random.default_rng(5)
    ds, w = _two_cluster_problem(rng, [0, 0], 4 * np.eye(2), 1000, [0, 0], 0.01 * np.eye(2), 300)
    res = merge_clusters(None, w, ds, MergeConfig(dip_bootstrap=200))
    g1, g2 = res.summaries
    assert bhattacharyya(g1, g2) > 1.0
    assert res.partition.tolist() == [0, 1]
    assert res.merge_log == []


def test_bimodal_pair_between_thresholds_is_excluded():
    rng = np.random.default_rng(6)
    ds, w = _two_cluster_problem(rng, [0, 0], 0.3 * np.eye(2), 600, [1.6, 0], 0.3 * np.eye(2), 600)
    res = merge_clusters(None, w, ds, MergeConfig(d1=0.2, d2=2.0, dip_bootstrap=300))
    step = res.merge_log[0]
    assert step.criterion == "dip" and not step.merged
    assert min(step.dip_pvalues.values()) < 0.05
    assert set(step.dip_pvalues) == {"axis0", "axis1", "fisher"}
    assert res.n_populations == 2


def test_unimodal_pair_between_thresholds_merges():
    rng = np.random.default_rng(7)
    ds, w = _two_cluster_problem(rng, [0, 0], np.eye(2), 700, [0.9, 0], np.eye(2), 700)
    res = merge_clusters(None, w, ds, MergeConfig(d1=0.05, d2=1.0, dip_bootstrap=300))
    step = res.merge_log[0]
    assert step.criterion == "dip" and step.merged
    assert res.n_populations == 1


def test_merge_deterministic_and_replayable():
    rng = np.random.default_rng(8)
    Y = np.vstack([rng.normal(c, 0.4, (200, 1)) for c in (0.0, 0.5, 3.0, 6.0)])
    ds = Dataset([Y])
    w = [_one_hot(np.repeat([1, 2, 3, 4], 200), 5)]
    cfg = MergeConfig(d1=0.2, d2=1.0, dip_bootstrap=200, seed=3)
    a = merge_clusters(None, w, ds, cfg)
    b = merge_clusters(None, w, ds, cfg)
    assert a.to_dict() == b.to_dict()
    np.testing.assert_array_equal(replay(a.merge_log, 4), a.partition)
    np.testing.assert_array_equal(replay([s.to_dict() | {"pair": s.pair} for s in a.merge_log], 4), a.partition)
    np.testing.assert_allclose(sum(s.sum(1) for s in a.soft_weights), 1.0)


def _coarser(fine, coarse):
    return all(len(set(coarse[fine == m])) == 1 for m in np.unique(fine))


def test_larger_d1_never_refines():
    rng = np.random.default_rng(9)
    for trial in range(4):
        centres = np.sort(rng.uniform(0, 4, 5))
        Y = np.vstack([rng.normal(c, 0.5, (150, 1)) for c in centres])
        ds = Dataset([Y])
        w = [_one_hot(np.repeat(np.arange(1, 6), 150), 6)]
        parts = [merge_clusters(None, w, ds, MergeConfig(d1=d1, d2=1.0, dip_bootstrap=200, seed=trial)).partition
                 for d1 in (0.05, 0.2, 0.5, 1.0)]
        for fine, coarse in zip(parts, parts[1:]):
            assert _coarser(fine, coarse)


def test_merge_config_validation():
    with pytest.raises(ConfigError):
        MergeConfig(d1=2.0, d2=1.0)
    with pytest.raises(ConfigError):
        MergeConfig(dip_alpha=0.0)
    with pytest.raises(ConfigError):
        merge_clusters([None], [np.ones((2, 3)) / 3], Dataset([np.zeros((2, 1))]))


def test_replay_unions():
    log = [MergeStep(((0,), (2,)), 0.1, "d1", True), MergeStep(((1,), (3,)), 0.5, "dip", False),
           MergeStep(((0, 2), (3,)), 0.6, "dip", True)]
    assert replay(log, 4).tolist() == [0, 1, 0, 0]


# ---------------------------------------------------------------------------
# weighted quantiles


def test_weighted_quantile_order_statistic():
    v = np.random.default_rng(10).permutation(np.arange(100.0))
    # strictly-smaller mass must exceed 25: the value with 26 smaller values
    assert weighted_quantile(v, np.ones(100), 0.25) == 26.0
    assert weighted_quantile(v, np.ones(100), 0.0) == 1.0
    assert weighted_quantile(v, np.ones(100), 1.0) == 99.0


def test_weighted_quantile_hard_minimum_and_errors():
    v = np.array([5.0, 1.0, 3.0, 8.0])
    w = np.array([1.0, 0.0, 1.0, 1.0])
    assert weighted_quantile(v, w, 1e-12) == 5.0
    with pytest.raises(DataError):
        weighted_quantile(v, np.zeros(4), 0.5)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=50), st.floats(0, 1), st.floats(0, 1))
def test_weighted_quantile_monotone(vals, a1, a2):
    v = np.array(vals)
    w = np.linspace(1.0, 2.0, v.size)
    lo, hi = sorted([a1, a2])
    assert weighted_quantile(v, w, lo) <= weighted_quantile(v, w, hi)


def test_population_quantiles_shape_and_partition():
    rng = np.random.default_rng(11)
    ds = Dataset([rng.normal(size=(50, 2))])
    w = [rng.dirichlet(np.ones(4), 50)]
    q = population_quantiles(w, ds)
    assert q.shape == (3, 2, 4)
    assert np.all(np.diff(q, axis=-1) >= 0)
    qm = population_quantiles(w, ds, partition=[0, 0, 1])
    assert qm.shape == (2, 2, 4)
