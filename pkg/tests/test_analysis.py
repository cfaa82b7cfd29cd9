import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import simple_prior
from hierflow.analysis import (
    activation_accuracy,
    autocorrelation,
    credible_interval,
    effective_sample_size,
    outlier_proportions,
    pca_biplot,
    population_sizes,
    summarize,
)
from hierflow.engine import McmcConfig, run_chain
from hierflow.errors import DataError
from hierflow.synthetic import GeneratorSpec, generate_synthetic


def test_constant_trace_zero_width_interval():
    lo, hi = credible_interval(np.full(100, 3.25))
    assert lo == hi == 3.25


def test_normal_interval():
    x = np.random.default_rng(0).standard_normal(10_000)
    lo, hi = credible_interval(x)
    assert abs(lo + 1.96) < 0.05 and abs(hi - 1.96) < 0.05


def test_interval_errors():
    with pytest.raises(ValueError):
        credible_interval([1.0, 2.0], level=1.0)
    with pytest.raises(DataError):
        credible_interval(np.empty((0, 2)))


def test_autocorrelation_and_ess():
    rng = np.random.default_rng(1)
    iid = rng.standard_normal(20000)
    assert autocorrelation(iid)[0] == pytest.approx(1.0)
    assert effective_sample_size(iid) == pytest.approx(20000, rel=0.1)
    rho = 0.8
    x = np.empty(50000)
    x[0] = 0
    e = rng.standard_normal(50000)
    for t in range(1, x.size):
        x[t] = rho * x[t - 1] + e[t]
    assert effective_sample_size(x) == pytest.approx(x.size * (1 - rho) / (1 + rho), rel=0.15)
    assert effective_sample_size(np.ones(50)) == 50


@pytest.fixture(scope="module")
def fitted():
    spec = GeneratorSpec(sizes=(150, 150, 150), theta=[[0.0, 0.0], [3.0, 3.0]], sigma_theta=np.zeros((2, 2, 2)),
                         psi=np.broadcast_to(np.eye(2) * 0.1 * 7, (2, 2, 2)), nu=[10.0, 10.0],
                         active=[[True, True], [True, False], [True, True]], base_weights=[0.6, 0.4])
    data, truth = generate_synthetic(spec, 1)
    prior = simple_prior(t=np.array([[0.0, 0.0], [3.0, 3.0]]), c_s=2.0)
    tr = run_chain(data, prior, McmcConfig(burn_in=100, production=200, seed=2))
    return tr, truth


def test_summarize_and_recovery(fitted):
    tr, truth = fitted
    s = summarize(tr, truth)
    np.testing.assert_allclose(s.activation, tr.Z.mean(0))
    assert s.theta.shape == (2, 2)
    assert {r["parameter"] for r in s.recovery} == {"theta", "latent_cov", "mu"}
    n_mu = sum(r["parameter"] == "mu" for r in s.recovery)
    assert n_mu == truth.Z.sum() * 2
    for r in s.recovery:
        assert r["difference"] == pytest.approx(r["truth"] - r["estimate"])
    acc = activation_accuracy(s.activation, truth.Z)
    assert acc["n_absent"] == 1 and acc["n_present"] == 5


def test_population_sizes_identity_and_full_merge(fitted):
    tr, _ = fitted
    pm = tr.pi.mean(0)
    np.testing.assert_allclose(population_sizes(tr, [0, 1]), pm[:, 1:], atol=1e-15)
    one = population_sizes(tr, [0, 0])
    np.testing.assert_allclose(one[:, 0], 1 - pm[:, 0], atol=1e-12)
    sizes = population_sizes(tr, [0, 1])
    assert np.all((sizes >= 0) & (sizes <= 1))
    np.testing.assert_allclose(sizes.sum(1) + outlier_proportions(tr), 1.0, atol=1e-10)
    with pytest.raises(DataError):
        population_sizes(tr, [0, 1, 2])


def test_summarize_empty_trace_error(fitted):
    tr, _ = fitted
    import dataclasses

    empty = dataclasses.replace(tr, theta=tr.theta[:0])
    with pytest.raises(DataError):
        summarize(empty)


def test_pca_rank_two():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20, 2)) @ rng.normal(size=(2, 6)) + 5.0
    res = pca_biplot(X)
    assert res.explained_variance_ratio[:2].sum() > 1 - 1e-12
    np.testing.assert_allclose(res.reconstruct(), X, atol=1e-10)


@given(st.integers(0, 10**6), st.integers(2, 8), st.integers(2, 6), st.booleans())
def test_pca_properties(seed, J, M, standardize):
    X = np.random.default_rng(seed).dirichlet(np.ones(M), J)
    res = pca_biplot(X, standardize=standardize)
    r = res.explained_variance_ratio
    assert abs(r.sum() - 1) <= 1e-12
    assert np.all(np.diff(r) <= 1e-15)
    np.testing.assert_allclose(res.reconstruct(), X, atol=1e-10)


def test_pca_errors():
    with pytest.raises(ValueError):
        pca_biplot(np.ones((5, 3)))
    with pytest.raises(ValueError):
        pca_biplot(np.ones((1, 3)))
