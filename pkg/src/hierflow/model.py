"""Domain types and log-density evaluations for the hierarchical mixture.

Parametrisation conventions used throughout the package:

* ``IW(Psi, nu)`` has density proportional to
  ``|X|^{-(nu+d+1)/2} exp(-tr(Psi X^{-1})/2)`` and mean ``Psi/(nu-d-1)``.
* ``W(V, n)`` has density proportional to
  ``|X|^{(n-d-1)/2} exp(-tr(V^{-1} X)/2)`` and mean ``n V``.
* Mixture weights ``pi[j]`` have ``K + 1`` entries; index 0 is the shared
  outlier component and index ``k`` (1-based) is latent cluster ``k - 1``
  of the ``K``-length per-cluster arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp, multigammaln

from ._linalg import cholesky, logdet_from_chol, tri_inv
from .errors import DataError, InvalidStateError, NotPositiveDefiniteError

LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class Dataset:
    """Grouped cell measurements: ``J`` samples of ``n_j x d`` matrices.

    ``scaling`` records a transform already applied to the values (see
    :func:`hierflow.io.apply_scaling`) so that it cannot be applied twice.
    """

    samples: tuple
    marker_names: tuple
    sample_ids: tuple
    scaling: object = None

    def __init__(self, samples: Sequence[np.ndarray], marker_names=None, sample_ids=None, scaling=None):
        arrs = []
        for j, s in enumerate(samples):
            a = np.array(s, dtype=np.float64, copy=True)
            if a.ndim == 1:
                a = a[:, None]
            if a.ndim != 2:
                raise DataError(f"sample {j} must be a 2-D array, got shape {a.shape}")
            a.setflags(write=False)
            arrs.append(a)
        if not arrs:
            raise DataError("dataset must contain at least one sample")
        d = arrs[0].shape[1]
        if d < 1:
            raise DataError("samples need at least one column")
        for j, a in enumerate(arrs):
            if a.shape[1] != d:
                raise DataError(f"sample {j} has {a.shape[1]} columns, expected {d}")
            if a.shape[0] < 1:
                raise DataError(f"sample {j} is empty")
            bad = np.argwhere(~np.isfinite(a))
            if bad.size:
                r, c = bad[0]
                raise DataError(f"sample {j} has a non-finite value at row {r}, column {c}")
        if marker_names is None:
            marker_names = [f"m{i}" for i in range(d)]
        if len(marker_names) != d:
            raise DataError(f"{len(marker_names)} marker names for {d} columns")
        if sample_ids is None:
            sample_ids = [f"s{j}" for j in range(len(arrs))]
        if len(sample_ids) != len(arrs):
            raise DataError(f"{len(sample_ids)} sample ids for {len(arrs)} samples")
        object.__setattr__(self, "samples", tuple(arrs))
        object.__setattr__(self, "marker_names", tuple(str(m) for m in marker_names))
        object.__setattr__(self, "sample_ids", tuple(str(s) for s in sample_ids))
        object.__setattr__(self, "scaling", scaling)

    @property
    def J(self) -> int:
        return len(self.samples)

    @property
    def d(self) -> int:
        return self.samples[0].shape[1]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([s.shape[0] for s in self.samples], dtype=np.int64)

    def pooled(self) -> np.ndarray:
        return np.vstack(self.samples)


def _as_stack(a, K: int, d: int, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape == (d, d):
        a = np.broadcast_to(a, (K, d, d))
    if a.shape != (K, d, d):
        raise ValueError(f"{name} must have shape ({K}, {d}, {d}), got {a.shape}")
    return np.array(a)


def _as_per_k(v, K: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0:
        v = np.full(K, float(v))
    if v.shape != (K,):
        raise ValueError(f"{name} must be a scalar or have length {K}")
    return v


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters for ``K`` latent clusters in ``d`` dimensions.

    ``n_theta`` and ``n_psi`` are shared across clusters by default; passing a
    length-``K`` array gives per-cluster values. ``a`` has ``K + 1`` entries
    with the outlier weight first.
    """

    t: np.ndarray
    S: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    lam: np.ndarray
    n_theta: np.ndarray
    n_psi: np.ndarray
    a: np.ndarray
    c_s: float
    mu0: np.ndarray
    sigma0: np.ndarray
    nu_min: int | None = None

    def __post_init__(self):
        t = np.atleast_2d(np.asarray(self.t, dtype=np.float64))
        K, d = t.shape
        S = _as_stack(self.S, K, d, "S")
        Q = _as_stack(self.Q, K, d, "Q")
        H = _as_stack(self.H, K, d, "H")
        lam = _as_per_k(self.lam, K, "lam")
        n_theta = _as_per_k(self.n_theta, K, "n_theta")
        n_psi = _as_per_k(self.n_psi, K, "n_psi")
        a = np.asarray(self.a, dtype=np.float64)
        if a.ndim == 0:
            a = np.full(K + 1, float(a))
        if a.shape != (K + 1,):
            raise ValueError(f"a must have length K + 1 = {K + 1}")
        mu0 = np.asarray(self.mu0, dtype=np.float64).reshape(d)
        sigma0 = np.asarray(self.sigma0, dtype=np.float64).reshape(d, d)
        nu_min = d + 2 if self.nu_min is None else int(self.nu_min)

        for name, st in (("S", S), ("Q", Q), ("H", H)):
            cholesky(st, f"prior {name}")
        cholesky(sigma0, "outlier covariance")
        if np.any(lam <= 0):
            raise ValueError("lam must be positive")
        if np.any(n_theta <= d - 1):
            raise ValueError("n_theta must exceed d - 1")
        if np.any(n_psi <= d - 1):
            raise ValueError("n_psi must exceed d - 1")
        if np.any(a <= 0) or not np.all(np.isfinite(a)):
            raise ValueError("Dirichlet weights must be positive")
        if not (self.c_s > 0):
            raise ValueError("c_s must be positive")
        if nu_min < d + 2:
            raise ValueError(f"nu_min must be at least d + 2 = {d + 2}")
        for name, val in (("t", t), ("S", S), ("Q", Q), ("H", H), ("lam", lam),
                          ("n_theta", n_theta), ("n_psi", n_psi), ("a", a),
                          ("mu0", mu0), ("sigma0", sigma0)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "c_s", float(self.c_s))
        object.__setattr__(self, "nu_min", nu_min)

    @property
    def K(self) -> int:
        return self.t.shape[0]

    @property
    def d(self) -> int:
        return self.t.shape[1]

    def with_(self, **changes) -> "PriorSpec":
        return replace(self, **changes)


@dataclass
class ChainState:
    """All latent variables at one iteration.

    Array shapes: ``theta (K, d)``, ``sigma_theta (K, d, d)``, ``psi (K, d, d)``,
    ``nu (K,)`` int, ``mu (J, K, d)``, ``sigma (J, K, d, d)``, ``pi (J, K + 1)``,
    ``Z (J, K)`` bool and ``x`` a list of per-sample int arrays with values in
    ``0..K``. Entries of ``mu``/``sigma`` for inactive ``(j, k)`` are auxiliary
    draws and do not enter any density.
    """

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
    def J(self) -> int:
        return self.mu.shape[0]

    @property
    def K(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.theta.shape[1]

    def copy(self) -> "ChainState":
        return ChainState(
            theta=self.theta.copy(), sigma_theta=self.sigma_theta.copy(),
            psi=self.psi.copy(), nu=self.nu.copy(), mu=self.mu.copy(),
            sigma=self.sigma.copy(), pi=self.pi.copy(), Z=self.Z.copy(),
            x=[xi.copy() for xi in self.x], mu0=self.mu0.copy(),
            sigma0=self.sigma0.copy(),
        )

    def latent_covariance(self) -> np.ndarray:
        """``Psi_k / (nu_k - d - 1)`` for every cluster."""
        return self.psi / (self.nu - self.d - 1.0)[:, None, None]


def check_state(state: ChainState, nu_min: int | None = None, tol: float = 1e-12) -> None:
    """Raise :class:`InvalidStateError` if any structural invariant fails."""
    K, d, J = state.K, state.d, state.J
    nu_min = d + 2 if nu_min is None else nu_min
    if np.any(state.nu < nu_min):
        raise InvalidStateError(f"nu below its minimum {nu_min}: {state.nu}")
    pi = state.pi
    if pi.shape != (J, K + 1):
        raise InvalidStateError(f"pi has shape {pi.shape}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > tol):
        raise InvalidStateError("pi rows must be probability vectors")
    if np.any(pi[:, 1:][~state.Z] != 0.0):
        raise InvalidStateError("inactive component with nonzero weight")
    if not np.all(state.Z.any(axis=1)):
        raise InvalidStateError("a sample has no active component")
    for j, xj in enumerate(state.x):
        if xj.size and (xj.min() < 0 or xj.max() > K):
            raise InvalidStateError(f"assignment out of range in sample {j}")
        used = np.unique(xj[xj > 0]) - 1
        if used.size and not np.all(state.Z[j, used]):
            raise InvalidStateError(f"sample {j} assigns cells to an inactive component")
    for name in ("sigma_theta", "psi", "sigma"):
        try:
            cholesky(getattr(state, name), name)
        except NotPositiveDefiniteError as exc:
            raise InvalidStateError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Densities


def log_gaussian(y, mu, sigma) -> float | np.ndarray:
    """Multivariate normal log density via Cholesky.

    ``y`` may be a single point ``(d,)`` or a batch ``(n, d)``.
    """
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    L = cholesky(sigma, "covariance")
    d = L.shape[0]
    diff = np.atleast_2d(y - mu)
    z = np.linalg.solve(L, diff.T)
    out = -0.5 * (d * LOG_2PI + logdet_from_chol(L)) - 0.5 * np.sum(z * z, axis=0)
    return float(out[0]) if y.ndim <= 1 else out


def log_mixture_density(y, state: ChainState, j: int) -> float:
    """Log of the sample-``j`` mixture density (outlier plus active clusters) at ``y``."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    terms = []
    if state.pi[j, 0] > 0:
        terms.append(np.log(state.pi[j, 0]) + log_gaussian(y, state.mu0, state.sigma0))
    for k in range(state.K):
        if state.Z[j, k] and state.pi[j, k + 1] > 0:
            terms.append(np.log(state.pi[j, k + 1]) + log_gaussian(y, state.mu[j, k], state.sigma[j, k]))
    if not terms:
        return float("-inf")
    return float(logsumexp(terms))


def _trace_inv_prod(LA: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``tr(A^{-1} B)`` for ``A = LA LA^T`` (batched)."""
    Li = tri_inv(LA)
    return np.einsum("...ij,...jk,...ik->...", Li, B, Li)


def log_wishart(X, V, n) -> np.ndarray | float:
    """Log density of ``W(V, n)`` at ``X`` (batched over leading axes)."""
    X = np.asarray(X, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    d = X.shape[-1]
    LX = cholesky(X, "Wishart argument")
    LV = cholesky(V, "Wishart scale")
    out = (
        0.5 * (n - d - 1) * logdet_from_chol(LX)
        - 0.5 * _trace_inv_prod(LV, X)
        - 0.5 * n * d * np.log(2.0)
        - 0.5 * n * logdet_from_chol(LV)
        - _multigammaln(0.5 * n, d)
    )
    return out if np.ndim(out) else float(out)


def log_invwishart(X, psi, nu) -> np.ndarray | float:
    """Log density of ``IW(psi, nu)`` at ``X`` (batched over leading axes)."""
    X = np.asarray(X, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    d = X.shape[-1]
    LX = cholesky(X, "inverse-Wishart argument")
    LP = cholesky(psi, "inverse-Wishart scale")
    out = (
        0.5 * nu * logdet_from_chol(LP)
        - 0.5 * nu * d * np.log(2.0)
        - _multigammaln(0.5 * nu, d)
        - 0.5 * (nu + d + 1) * logdet_from_chol(LX)
        - 0.5 * _trace_inv_prod(LX, psi)
    )
    return out if np.ndim(out) else float(out)


def _multigammaln(a, d: int):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        return multigammaln(float(a), d)
    # multigammaln only takes scalars in older scipy releases
    j = np.arange(d)
    return d * (d - 1) / 4.0 * np.log(np.pi) + np.sum(gammaln(a[..., None] - 0.5 * j), axis=-1)


def log_mvnormal(x, mean, cov) -> np.ndarray | float:
    """Batched normal log density: ``x``, ``mean`` shaped ``(..., d)``."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    L = cholesky(cov, "covariance")
    d = x.shape[-1]
    z = np.linalg.solve(L, (x - mean)[..., None])[..., 0]
    out = -0.5 * (d * LOG_2PI + logdet_from_chol(L)) - 0.5 * np.sum(z * z, axis=-1)
    return out if np.ndim(out) else float(out)


def log_nu_prior(nu, lam, nu_min: int):
    """Log pmf of the geometric prior ``p(nu) ∝ exp(-lam * nu)`` on ``nu >= nu_min``."""
    nu = np.asarray(nu, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    out = np.log(-np.expm1(-lam)) - lam * (nu - nu_min)
    return np.where(nu >= nu_min, out, -np.inf)


def log_dirichlet(p, alpha) -> float:
    """Dirichlet log density; zero-weight coordinates must already be removed."""
    p = np.asarray(p, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum() + np.sum((alpha - 1.0) * np.log(p)))


def log_prior(state: ChainState, prior: PriorSpec) -> float:
    """Joint log prior of all model parameters.

    The activation prior contributes ``-c_s * sum(Z)`` without its
    normalising constant, so ``log_prior`` is exactly linear in ``c_s`` for
    a fixed state. The constant cancels in every acceptance ratio the
    sampler uses. Auxiliary parameters of inactive components are excluded.
    """
    if np.any(state.nu < prior.nu_min):
        raise InvalidStateError(f"nu below its minimum {prior.nu_min}: {state.nu}")
    if not np.all(state.Z.any(axis=1)):
        return float("-inf")
    lp = 0.0
    lp += np.sum(log_mvnormal(state.theta, prior.t, prior.S))
    lp += np.sum(log_invwishart(state.sigma_theta, prior.Q, prior.n_theta))
    lp += np.sum(log_wishart(state.psi, prior.H, prior.n_psi))
    lp += np.sum(log_nu_prior(state.nu, prior.lam, prior.nu_min))

    jj, kk = np.nonzero(state.Z)
    if jj.size:
        lp += np.sum(log_mvnormal(state.mu[jj, kk], state.theta[kk], state.sigma_theta[kk]))
        lp += np.sum(log_invwishart(state.sigma[jj, kk], state.psi[kk], state.nu[kk].astype(float)))

    for j in range(state.J):
        keep = np.concatenate([[True], state.Z[j]])
        p = state.pi[j, keep]
        if np.any(p <= 0):
            return float("-inf")
        lp += log_dirichlet(p, prior.a[keep])
    lp += -prior.c_s * float(state.Z.sum())
    return float(lp)


def default_outlier(data: Dataset, scale: float = 4.0):
    """Pooled mean and ``scale`` times the pooled covariance."""
    Y = data.pooled()
    mu0 = Y.mean(axis=0)
    cov = np.atleast_2d(np.cov(Y, rowvar=False))
    return mu0, scale * cov


__all__ = [
    "Dataset", "PriorSpec", "ChainState", "check_state", "log_gaussian",
    "log_mixture_density", "log_wishart", "log_invwishart", "log_mvnormal",
    "log_nu_prior", "log_dirichlet", "log_prior", "default_outlier",
]
