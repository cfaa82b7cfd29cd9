"""Synthetic grouped data drawn top-down from the hierarchical model.

Two presets are provided. ``sec31_spec`` builds a design with 80 samples of
15000 cells in three dimensions and four latent clusters. One cluster is
present in 8 samples at 1% weight and another in 24 samples. ``desk_spec``
is the same design shrunk to 20 samples of 2000 cells, which is small
enough for a full fit on a desktop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import cholesky
from .distributions import DATA_STREAM, RngStream, draw_dirichlet, draw_inverse_wishart
from .errors import ConfigError, NotPositiveDefiniteError
from .model import Dataset


@dataclass
class GeneratorSpec:
    """Parameters of a synthetic dataset.

    Parameters
    ----------
    sizes : sequence of int
        Cells per sample.
    theta, sigma_theta, psi, nu
        True latent-cluster parameters, shapes ``(K, d)``, ``(K, d, d)``,
        ``(K, d, d)`` and ``(K,)``.
    active : (J, K) bool array
        Which components exist in each sample.
    base_weights : (K,) array
        Relative sizes of components without a fixed weight.
    fixed_weights : dict
        ``{k: w}`` pins component ``k`` to weight ``w`` wherever it is active.
    concentration : float or None
        Per-sample weights are ``Dirichlet(concentration * base_weights)``
        restricted to the active, unpinned components. ``None`` uses the
        base weights exactly.
    outlier_weight : float
        Share of cells drawn from the outlier component.
    outlier_mean, outlier_cov : optional
        Outlier distribution; defaults to the moments of the latent means
        with four times the average latent covariance plus their spread.
    """

    sizes: tuple
    theta: np.ndarray
    sigma_theta: np.ndarray
    psi: np.ndarray
    nu: np.ndarray
    active: np.ndarray
    base_weights: np.ndarray
    fixed_weights: dict = field(default_factory=dict)
    concentration: float | None = 50.0
    outlier_weight: float = 0.0
    outlier_mean: np.ndarray | None = None
    outlier_cov: np.ndarray | None = None
    marker_names: tuple | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sizes = tuple(int(n) for n in np.atleast_1d(self.sizes))
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=np.float64))
        K, d = self.theta.shape
        self.sigma_theta = np.asarray(self.sigma_theta, dtype=np.float64).reshape(K, d, d)
        self.psi = np.asarray(self.psi, dtype=np.float64).reshape(K, d, d)
        self.nu = np.asarray(self.nu, dtype=np.float64).reshape(K)
        self.active = np.asarray(self.active, dtype=bool)
        self.base_weights = np.asarray(self.base_weights, dtype=np.float64).reshape(K)
        J = len(self.sizes)
        if J < 1 or min(self.sizes) < 1:
            raise ConfigError("every sample needs at least one cell")
        if self.active.shape != (J, K):
            raise ConfigError(f"active must have shape ({J}, {K})")
        if not np.all(self.active.any(axis=1)):
            raise ConfigError("every sample needs an active component")
        if np.any(self.nu <= d + 1):
            raise ConfigError("nu must exceed d + 1")
        if np.any(self.base_weights <= 0):
            raise ConfigError("base weights must be positive")
        if not 0.0 <= self.outlier_weight < 1.0:
            raise ConfigError("outlier_weight must lie in [0, 1)")
        for k, w in self.fixed_weights.items():
            if not 0 <= int(k) < K or not 0.0 < float(w) < 1.0:
                raise ConfigError(f"invalid fixed weight {k}: {w}")
        try:
            cholesky(self.psi, "generator psi")
        except NotPositiveDefiniteError as exc:
            raise ConfigError(str(exc)) from exc
        if np.any(np.linalg.eigvalsh(self.sigma_theta) < -1e-12):
            raise ConfigError("sigma_theta must be positive semidefinite")
        if self.concentration is not None and self.concentration <= 0:
            raise ConfigError("concentration must be positive")

    @property
    def J(self) -> int:
        return len(self.sizes)

    @property
    def K(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.theta.shape[1]

    def latent_covariance(self) -> np.ndarray:
        return self.psi / (self.nu - self.d - 1.0)[:, None, None]


@dataclass
class GroundTruth:
    """Every latent quantity behind a synthetic :class:`Dataset`."""

    theta: np.ndarray
    sigma_theta: np.ndarray
    psi: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    pi: np.ndarray
    Z: np.ndarray
    x: list
    mu0: np.ndarray
    sigma0: np.ndarray

    @property
    def K(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.theta.shape[1]

    def latent_covariance(self) -> np.ndarray:
        return self.psi / (self.nu - self.d - 1.0)[:, None, None]


def _psd_factor(A: np.ndarray) -> np.ndarray:
    """Cholesky factor, or a symmetric square root when ``A`` is only semidefinite."""
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(A)
        return V * np.sqrt(np.clip(w, 0.0, None))


def _weights_for(spec: GeneratorSpec, j: int, rng: RngStream) -> np.ndarray:
    K = spec.K
    pi = np.zeros(K + 1)
    pi[0] = spec.outlier_weight
    act = spec.active[j]
    pinned = np.zeros(K, dtype=bool)
    for k, w in spec.fixed_weights.items():
        if act[int(k)]:
            pinned[int(k)] = True
            pi[int(k) + 1] = float(w)
    free = act & ~pinned
    rest = 1.0 - pi.sum()
    if rest <= 0:
        raise ConfigError(f"weights of sample {j} leave nothing for the free components")
    if free.any():
        base = spec.base_weights[free]
        if spec.concentration is None:
            share = base / base.sum()
        else:
            share = draw_dirichlet(spec.concentration * base / base.sum(), rng)
        pi[1:][free] = rest * share
    else:
        pi[1:][pinned] *= (1.0 - pi[0]) / pi[1:][pinned].sum()
    return pi


def generate_synthetic(spec: GeneratorSpec, rng: RngStream | int = 0) -> tuple[Dataset, GroundTruth]:
    """Sample a dataset from the model with the given true parameters.

    Per sample and component, ``mu_jk ~ N(theta_k, sigma_theta_k)`` and
    ``sigma_jk ~ IW(psi_k, nu_k)``; parameters are drawn for inactive
    components too but never used. Cells are then drawn from the mixture.
    """
    if isinstance(rng, (int, np.integer)):
        rng = RngStream(int(rng), DATA_STREAM)
    J, K, d = spec.J, spec.K, spec.d
    Lt = np.stack([_psd_factor(s) for s in spec.sigma_theta])
    mu = spec.theta[None] + np.einsum("kil,jkl->jki", Lt, rng.normal((J, K, d)))
    sigma = draw_inverse_wishart(np.broadcast_to(spec.psi, (J, K, d, d)),
                                 np.broadcast_to(spec.nu, (J, K)), rng)
    sigma = 0.5 * (sigma + np.swapaxes(sigma, -1, -2))
    if spec.outlier_mean is None:
        mu0 = spec.theta.mean(axis=0)
    else:
        mu0 = np.asarray(spec.outlier_mean, dtype=np.float64).reshape(d)
    if spec.outlier_cov is None:
        spread = np.atleast_2d(np.cov(spec.theta, rowvar=False)) if K > 1 else np.zeros((d, d))
        sigma0 = 4.0 * (spec.latent_covariance().mean(axis=0) + spread)
    else:
        sigma0 = np.asarray(spec.outlier_cov, dtype=np.float64).reshape(d, d)
    L0 = cholesky(sigma0, "outlier covariance")
    Ls = np.linalg.cholesky(sigma)

    pi = np.zeros((J, K + 1))
    samples, xs = [], []
    for j in range(J):
        pi[j] = _weights_for(spec, j, rng)
        n = spec.sizes[j]
        u = rng.uniform(n)
        x = np.searchsorted(np.cumsum(pi[j]), u * pi[j].sum(), side="right").clip(0, K).astype(np.intp)
        z = rng.normal((n, d))
        Y = np.empty((n, d))
        out = x == 0
        Y[out] = mu0 + z[out] @ L0.T
        for k in range(K):
            sel = x == k + 1
            Y[sel] = mu[j, k] + z[sel] @ Ls[j, k].T
        samples.append(Y)
        xs.append(x)
    names = spec.marker_names or tuple(f"m{i + 1}" for i in range(d))
    data = Dataset(samples, marker_names=names, sample_ids=[f"sample{j + 1:03d}" for j in range(J)])
    truth = GroundTruth(theta=spec.theta.copy(), sigma_theta=spec.sigma_theta.copy(), psi=spec.psi.copy(),
                        nu=spec.nu.copy(), mu=mu, sigma=sigma, pi=pi, Z=spec.active.copy(), x=xs,
                        mu0=mu0, sigma0=sigma0)
    return data, truth


# ---------------------------------------------------------------------------
# Presets

# Latent means on a [0, 1]-scaled marker axis, one row per cluster. The
# third cluster is the partially present one and the fourth the rare one.
_SEC31_THETA = np.array([
    [0.25, 0.25, 0.70],
    [0.70, 0.30, 0.30],
    [0.30, 0.75, 0.30],
    [0.70, 0.70, 0.70],
])
_SEC31_LATENT_COV = np.array([
    [[1.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 1.0]],
    [[1.2, -0.3, 0.1], [-0.3, 0.8, 0.0], [0.1, 0.0, 1.0]],
    [[0.8, 0.0, 0.2], [0.0, 1.0, -0.3], [0.2, -0.3, 1.2]],
    [[0.6, 0.1, 0.0], [0.1, 0.6, 0.1], [0.0, 0.1, 0.6]],
]) * 0.004
_SEC31_NU = np.array([15.0, 20.0, 25.0, 30.0])
_SEC31_SIGMA_THETA = np.eye(3) * 0.02**2
_SEC31_BASE = np.array([0.5, 0.3, 0.2, 0.01])


def _spread_indices(J: int, count: int) -> np.ndarray:
    """``count`` sample indices spaced evenly over ``0..J-1``."""
    return np.floor(np.arange(count) * J / count).astype(int)


def _sec31_like(J: int, n: int, n_partial: int, n_rare: int, rare_weight: float = 0.01) -> GeneratorSpec:
    K = 4
    active = np.ones((J, K), dtype=bool)
    active[:, 2] = False
    active[_spread_indices(J, n_partial), 2] = True
    active[:, 3] = False
    # offset by one so the rare cluster does not always share samples with the partial one
    active[(_spread_indices(J, n_rare) + 1) % J, 3] = True
    nu = _SEC31_NU.copy()
    psi = _SEC31_LATENT_COV * (nu - 4.0)[:, None, None]
    n_components = int(active.sum())
    return GeneratorSpec(
        sizes=(n,) * J, theta=_SEC31_THETA.copy(), sigma_theta=np.broadcast_to(_SEC31_SIGMA_THETA, (K, 3, 3)),
        psi=psi, nu=nu, active=active, base_weights=_SEC31_BASE.copy(), fixed_weights={3: rare_weight},
        concentration=50.0, outlier_weight=0.0, marker_names=("m1", "m2", "m3"),
        metadata={"n_sample_components": n_components, "stated_pooled_component_count": 232},
    )


def sec31_spec(scale: float = 1.0) -> GeneratorSpec:
    """80 samples of ``round(15000 * scale)`` cells; clusters 3 and 4 present in 24 and 8 samples."""
    if not scale > 0:
        raise ConfigError("scale must be positive")
    return _sec31_like(80, max(1, int(round(15000 * scale))), n_partial=24, n_rare=8)


def desk_spec() -> GeneratorSpec:
    """20 samples of 2000 cells; the rare cluster is absent in 90% of samples."""
    return _sec31_like(20, 2000, n_partial=6, n_rare=2)


PRESETS = {"sec31": sec31_spec, "desk": desk_spec}


__all__ = ["GeneratorSpec", "GroundTruth", "generate_synthetic", "sec31_spec", "desk_spec", "PRESETS"]
