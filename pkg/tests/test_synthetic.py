import numpy as np
import pytest
from scipy import stats

from hierflow.errors import ConfigError
from hierflow.synthetic import GeneratorSpec, desk_spec, generate_synthetic, sec31_spec


def _mardia_skewness_p(Y):
    n, d = Y.shape
    D = Y - Y.mean(0)
    S = D.T @ D / n
    G = D @ np.linalg.solve(S, D.T)
    b1 = np.sum(G**3) / n**2
    return stats.chi2(d * (d + 1) * (d + 2) / 6).sf(n * b1 / 6)


def test_single_gaussian_oracle_is_normal():
    nu = 1e7
    spec = GeneratorSpec(sizes=(600, 600, 600), theta=[[1.0, -2.0, 0.5]], sigma_theta=np.zeros((1, 3, 3)),
                         psi=np.eye(3) * (nu - 4), nu=[nu], active=np.ones((3, 1), bool), base_weights=[1.0])
    data, truth = generate_synthetic(spec, 3)
    Y = data.pooled()
    assert _mardia_skewness_p(Y) > 0.01
    np.testing.assert_allclose(np.cov(Y, rowvar=False), np.eye(3), atol=0.1)
    np.testing.assert_allclose(truth.mu[:, 0], np.tile([1.0, -2.0, 0.5], (3, 1)), atol=1e-12)


def test_seeded_determinism():
    a, ta = generate_synthetic(desk_spec(), 5)
    b, tb = generate_synthetic(desk_spec(), 5)
    for u, v in zip(a.samples, b.samples):
        np.testing.assert_array_equal(u, v)
    np.testing.assert_array_equal(ta.mu, tb.mu)
    c, _ = generate_synthetic(desk_spec(), 6)
    assert not np.array_equal(a.samples[0], c.samples[0])


def test_sec31_preset_design():
    spec = sec31_spec()
    assert spec.J == 80 and spec.d == 3 and spec.K == 4 and set(spec.sizes) == {15000}
    assert spec.active[:, 2].sum() == 24 and spec.active[:, 3].sum() == 8
    assert spec.active[:, :2].all()
    small = sec31_spec(0.1)
    assert small.J == 80 and set(small.sizes) == {1500}


def test_rare_cluster_weight_and_truth_consistency():
    data, truth = generate_synthetic(desk_spec(), 2024)
    assert data.J == 20 and data.d == 3 and set(data.sizes.tolist()) == {2000}
    rare = truth.Z[:, 3]
    assert rare.sum() == 2  # absent in 90% of samples
    np.testing.assert_allclose(truth.pi[rare, 4], 0.01)
    for j in range(data.J):
        np.testing.assert_allclose(truth.pi[j].sum(), 1.0)
        assert np.all(truth.pi[j, 1:][~truth.Z[j]] == 0)
        assert set(np.unique(truth.x[j])) <= {0} | set((np.flatnonzero(truth.Z[j]) + 1).tolist())
        assert truth.x[j].size == data.sizes[j]


@pytest.mark.parametrize("kw", [
    dict(nu=[2.0]),
    dict(active=np.zeros((2, 1), bool)),
    dict(base_weights=[0.0]),
    dict(outlier_weight=1.0),
    dict(sizes=(0, 5)),
    dict(fixed_weights={3: 0.1}),
    dict(psi=-np.eye(2)),
])
def test_invalid_spec(kw):
    base = dict(sizes=(5, 5), theta=[[0.0, 0.0]], sigma_theta=np.eye(2), psi=np.eye(2), nu=[5.0],
                active=np.ones((2, 1), bool), base_weights=[1.0])
    base.update(kw)
    with pytest.raises((ConfigError, ValueError)):
        GeneratorSpec(**base)


def test_scale_must_be_positive():
    with pytest.raises(ConfigError):
        sec31_spec(0.0)
