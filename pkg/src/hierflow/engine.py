"""Posterior sampler for the hierarchical mixture.

One sweep runs a per-sample block for every sample ``j``, which draws
assignments, weights, component parameters and an activation move. A latent
block follows, drawing ``theta``, ``sigma_theta``, ``psi`` and a Metropolis
step for ``nu``. Per-sample blocks only read the latent layer and write
their own slices of the state. Each block uses its own random stream, so the
sweep gives bit-identical results for any number of worker threads.

Components that are switched off in a sample keep auxiliary ``(mu, sigma)``
values. These are refreshed from their prior on every sweep and serve as
birth proposals in the activation move.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import betaln, gammaln, multigammaln

from . import kernels
from ._linalg import inv_from_chol, logdet_from_chol, safe_cholesky, symmetrize, tri_inv
from .distributions import (
    INIT_STREAM,
    LATENT_STREAM,
    RngStream,
    bartlett_factor,
    draw_beta,
    draw_chisq,
    draw_dirichlet,
    draw_inverse_wishart,
    draw_wishart,
)
from .errors import ConfigError, NumericalError
from .model import ChainState, Dataset, PriorSpec, log_prior

# ---------------------------------------------------------------------------
# Configuration and trace containers


@dataclass
class McmcConfig:
    """Run-length, proposal and recording settings.

    ``seed`` fixes every stream: sample ``j`` uses stream ``j``, the latent
    block and pooled predictive draws use a reserved stream, and
    initialisation another.
    """

    burn_in: int = 1000
    production: int = 1000
    thin: int = 1
    rj_enabled: bool = True
    nu_proposal_halfwidth: int = 2
    activation_threshold: float = 0.01
    seed: int = 0
    workers: int = 1
    predictive_sample_ids: tuple = ()
    predictive_pooled: bool = True
    record_soft_assignments: bool = True

    def __post_init__(self):
        if self.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")
        if self.production < 1:
            raise ConfigError("production must be >= 1")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.nu_proposal_halfwidth < 1:
            raise ConfigError("nu_proposal_halfwidth must be >= 1")
        if not 0.0 < self.activation_threshold < 1.0:
            raise ConfigError("activation_threshold must lie in (0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.predictive_sample_ids = tuple(int(j) for j in self.predictive_sample_ids)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["predictive_sample_ids"] = list(self.predictive_sample_ids)
        return out


@dataclass
class InitSpec:
    """Optional starting values. Anything left ``None`` is derived from data."""

    theta: np.ndarray | None = None
    cov: np.ndarray | None = None
    nu: np.ndarray | None = None
    Z: np.ndarray | None = None
    from_prior: bool = False


@dataclass
class Trace:
    """Thinned draws plus per-cell assignment frequencies and diagnostics."""

    iterations: np.ndarray
    theta: np.ndarray
    sigma_theta: np.ndarray
    psi: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    pi: np.ndarray
    Z: np.ndarray
    log_posterior: np.ndarray
    log_likelihood: np.ndarray
    predictive: np.ndarray
    predictive_labels: list
    soft_counts: list
    n_soft: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.theta.shape[0]

    @property
    def K(self) -> int:
        return self.theta.shape[1]

    @property
    def d(self) -> int:
        return self.theta.shape[2]

    @property
    def J(self) -> int:
        return self.mu.shape[1]

    def latent_covariance(self) -> np.ndarray:
        return self.psi / (self.nu - self.d - 1.0)[..., None, None]

    def activation_probability(self) -> np.ndarray:
        return self.Z.mean(axis=0)

    def soft_weights(self, j: int) -> np.ndarray:
        """Posterior frequency of each assignment for cells of sample ``j``."""
        if self.n_soft == 0:
            raise ValueError("trace holds no assignment frequencies")
        return self.soft_counts[j] / float(self.n_soft)


# ---------------------------------------------------------------------------
# Conditional distributions (pure functions, batched over leading axes)


def _chol_or_raise(A, what):
    L, ok, _ = safe_cholesky(A)
    if not np.all(ok):
        raise NumericalError(f"{what} is not positive definite")
    return L


def mu_conditional(theta, sigma_theta, sigma, count, total):
    """Mean and covariance of ``mu | theta, sigma_theta, sigma, data``.

    Precision ``sigma_theta^{-1} + count * sigma^{-1}`` and mean
    ``V (sigma_theta^{-1} theta + sigma^{-1} total)``.
    """
    count = np.asarray(count, dtype=np.float64)
    Pt = inv_from_chol(_chol_or_raise(sigma_theta, "sigma_theta"))
    Ps = inv_from_chol(_chol_or_raise(sigma, "sigma"))
    prec = symmetrize(Pt + count[..., None, None] * Ps)
    Lp = _chol_or_raise(prec, "mu precision")
    V = inv_from_chol(Lp)
    b = np.einsum("...ij,...j->...i", Pt, theta) + np.einsum("...ij,...j->...i", Ps, total)
    return np.einsum("...ij,...j->...i", V, b), V


def scatter_about(mu, count, total, outer):
    """``sum_i (y_i - mu)(y_i - mu)^T`` from raw moments."""
    count = np.asarray(count, dtype=np.float64)
    ms = mu[..., :, None] * total[..., None, :]
    S = outer - ms - np.swapaxes(ms, -1, -2) + count[..., None, None] * mu[..., :, None] * mu[..., None, :]
    return symmetrize(S)


def sigma_conditional(psi, nu, count, total, outer, mu):
    """Scale and dof of ``sigma | mu, psi, nu, data`` (inverse-Wishart)."""
    return symmetrize(psi + scatter_about(mu, count, total, outer)), np.asarray(nu, dtype=np.float64) + count


def theta_conditional(t, S, sigma_theta, mu_sum, m):
    """Mean and covariance of ``theta | mu, sigma_theta``.

    Precision ``S^{-1} + m sigma_theta^{-1}``; ``mu_sum`` is the sum of the
    contributing component means.
    """
    m = np.asarray(m, dtype=np.float64)
    PS = inv_from_chol(_chol_or_raise(S, "S"))
    Pt = inv_from_chol(_chol_or_raise(sigma_theta, "sigma_theta"))
    prec = symmetrize(PS + m[..., None, None] * Pt)
    V = inv_from_chol(_chol_or_raise(prec, "theta precision"))
    b = np.einsum("...ij,...j->...i", PS, t) + np.einsum("...ij,...j->...i", Pt, mu_sum)
    return np.einsum("...ij,...j->...i", V, b), V


def sigma_theta_conditional(Q, n_theta, dev_outer, m):
    """Scale and dof of ``sigma_theta | theta, mu``; ``dev_outer`` is ``sum (mu - theta)(mu - theta)^T``."""
    return symmetrize(Q + dev_outer), np.asarray(n_theta, dtype=np.float64) + m


def psi_conditional(H, n_psi, sigma_inv_sum, m, nu):
    """Scale and dof of ``psi | sigma, nu`` (Wishart)."""
    PH = inv_from_chol(_chol_or_raise(H, "H"))
    V = inv_from_chol(_chol_or_raise(symmetrize(PH + sigma_inv_sum), "psi precision"))
    return symmetrize(V), np.asarray(n_psi, dtype=np.float64) + np.asarray(m, dtype=np.float64) * nu


def nu_log_ratio(nu, nu_prop, logdet_psi, sum_logdet_sigma, m, lam, d):
    """Log acceptance ratio for ``nu -> nu_prop`` (symmetric proposal).

    The trace terms of the inverse-Wishart densities do not depend on ``nu``
    and cancel.
    """
    delta = nu_prop - nu
    lik = 0.5 * delta * (m * (logdet_psi - d * np.log(2.0)) - sum_logdet_sigma)
    lik -= m * (multigammaln(0.5 * nu_prop, d) - multigammaln(0.5 * nu, d))
    return lik - lam * delta


def propose_nu(nu: int, h: int, nu_min: int, rng: RngStream) -> int:
    """Uniform step in ``{-h..h} \\ {0}``, reflected about ``nu_min - 1/2``.

    The reflection keeps the proposal symmetric on ``nu >= nu_min``.
    """
    step = int(rng.integers(1, h + 1))
    if rng.uniform() < 0.5:
        step = -step
    prop = nu + step
    if prop < nu_min:
        prop = 2 * nu_min - 1 - prop
    return prop


def rj_birth_log_terms(pi_active, w, a_active, a_k):
    """Non-likelihood terms of a birth move's log acceptance ratio.

    ``pi_active`` holds the current nonzero weights (outlier included) and
    ``a_active`` their Dirichlet parameters. Returns the log Dirichlet prior
    ratio, the log Beta proposal density of ``w`` and the log Jacobian of the
    weight shrinkage. Their combination ``dir - beta + jac`` is identically
    zero for this proposal, which the test suite checks.
    """
    pi_active = np.asarray(pi_active, dtype=np.float64)
    a_active = np.asarray(a_active, dtype=np.float64)
    s = pi_active.size
    A = a_active.sum()
    new = np.concatenate([pi_active * (1.0 - w), [w]])
    alpha_new = np.concatenate([a_active, [a_k]])
    log_dir_new = gammaln(alpha_new.sum()) - gammaln(alpha_new).sum() + np.sum((alpha_new - 1) * np.log(new))
    log_dir_old = gammaln(A) - gammaln(a_active).sum() + np.sum((a_active - 1) * np.log(pi_active))
    log_beta = (a_k - 1) * np.log(w) + (A - 1) * np.log1p(-w) - betaln(a_k, A)
    log_jac = (s - 1) * np.log1p(-w)
    return float(log_dir_new - log_dir_old), float(log_beta), float(log_jac)


# ---------------------------------------------------------------------------
# Single-step updates on raw arrays


def _iw_draw_from_chol(Lscale, dof, rng):
    d = Lscale.shape[-1]
    A = bartlett_factor(np.broadcast_to(dof, Lscale.shape[:-2]), d, rng)
    T = tri_inv(A) @ np.swapaxes(Lscale, -1, -2)
    return symmetrize(np.swapaxes(T, -1, -2) @ T)


def update_assignments(Y, logdens, pi_j, rng: RngStream):
    """Draw ``x_ij`` for one sample; returns ``(x, counts, sums, outer)``.

    ``logdens`` holds ``log N(y_i; mu_k, sigma_k)`` with the outlier in
    column 0. Columns with zero weight are never chosen.
    """
    with np.errstate(divide="ignore"):
        logpi = np.log(pi_j)
    u = rng.uniform(Y.shape[0])
    x, _, _ = kernels.sample_assignments(logdens, logpi, u)
    counts, sums, outer = kernels.suff_stats(Y, x, logdens.shape[1])
    return x, counts, sums, outer


def update_pi(counts, a, Z_j, rng: RngStream):
    """Dirichlet draw over the outlier and active components; others exactly 0."""
    keep = np.concatenate([[True], np.asarray(Z_j, dtype=bool)])
    out = np.zeros(keep.size)
    out[keep] = draw_dirichlet(np.asarray(a)[keep] + np.asarray(counts)[keep], rng)
    return out


def update_component_params(mu_j, sigma_j, counts, sums, outer, theta, sigma_theta, psi, nu, rng,
                            prec_theta=None, chol_j=None):
    """Gibbs draws of ``(mu_jk, sigma_jk)`` for every ``k`` of one sample.

    ``counts``/``sums``/``outer`` are per-cluster (length ``K``; the outlier
    column removed). Zero counts give draws from the prior, which is how
    inactive components are refreshed. ``mu`` is drawn given the current
    ``sigma``, then ``sigma`` given the new ``mu``. A component whose
    factorisation fails even after jitter keeps its old values.

    Returns ``(mu, sigma, sigma_chol, n_retained, n_jitter)``.
    """
    K, d = mu_j.shape
    c = np.asarray(counts, dtype=np.float64)
    nj0 = 0
    if prec_theta is None:
        Lt, _, _ = safe_cholesky(sigma_theta)
        prec_theta = inv_from_chol(Lt)
    if chol_j is None:
        chol_j, ok, nj0 = safe_cholesky(sigma_j)
        if not np.all(ok):
            raise NumericalError("component covariance is not positive definite")
    z_mu = rng.normal((K, d))
    dof = np.asarray(nu, dtype=np.float64) + c
    chi2 = draw_chisq(dof[:, None] - np.arange(d), rng)
    z_off = rng.normal((K, d * (d - 1) // 2))
    mu, sig, L, n_ret, n_jit = kernels.component_update(
        mu_j, sigma_j, chol_j, c, sums, outer, theta, prec_theta, psi, dof - c, z_mu, chi2, z_off)
    return mu, sig, L, n_ret, n_jit + nj0


class ActivationResult(NamedTuple):
    Z: np.ndarray
    pi: np.ndarray
    kind: str
    accepted: bool
    loglik: float


def update_activation(logdens, pi_j, Z_j, a, c_s, rng: RngStream, prior_only=False,
                      loglik_current: float | None = None, weights_out=None) -> ActivationResult:
    """One birth/death proposal on the activation pattern of one sample.

    The move targets the distribution of ``(Z_j, pi_j)`` with assignments
    integrated out, so deaths may be proposed for any active component.
    ``kind`` is ``"birth"``, ``"death"`` or ``"empty"``. The last marks a
    death that would leave no active component, which is rejected outright.
    ``loglik`` is the mixture log-likelihood under the returned weights
    (0 when ``prior_only``). If ``weights_out = (P, tot)`` is given, the row
    weights under the proposed mixture weights are written there.
    """
    K = Z_j.size
    k = int(rng.integers(K))
    keep = np.concatenate([[True], Z_j])
    a = np.asarray(a, dtype=np.float64)

    def loglik(p, out=None):
        if prior_only:
            return 0.0
        with np.errstate(divide="ignore"):
            lp = np.log(p)
        if out is None:
            return kernels.mixture_loglik(logdens, lp)
        return kernels.mixture_weights(logdens, lp, *out)

    ll_old = loglik(pi_j) if loglik_current is None else loglik_current
    if Z_j[k]:
        if np.count_nonzero(Z_j) == 1:
            return ActivationResult(Z_j, pi_j, "empty", False, ll_old)
        kind = "death"
        w = pi_j[k + 1]
        new = pi_j.copy()
        new[k + 1] = 0.0
        new /= 1.0 - w
        Znew = Z_j.copy()
        Znew[k] = False
        keep_new = keep.copy()
        keep_new[k + 1] = False
        ld, lb, lj = rj_birth_log_terms(new[keep_new], w, a[keep_new], a[k + 1])
        extra = c_s - (ld - lb + lj)
    else:
        kind = "birth"
        w = draw_beta(a[k + 1], a[keep].sum(), rng)
        if not 0.0 < w < 1.0:
            return ActivationResult(Z_j, pi_j, kind, False, ll_old)
        new = pi_j * (1.0 - w)
        new[k + 1] = w
        Znew = Z_j.copy()
        Znew[k] = True
        ld, lb, lj = rj_birth_log_terms(pi_j[keep], w, a[keep], a[k + 1])
        extra = -c_s + (ld - lb + lj)
    u = rng.uniform()
    if not np.all(new[np.concatenate([[True], Znew])] > 0):
        return ActivationResult(Z_j, pi_j, kind, False, ll_old)
    ll_new = loglik(new, weights_out)
    log_r = ll_new - ll_old + extra
    if np.isfinite(log_r) and np.log(u) < log_r:
        return ActivationResult(Znew, new, kind, True, ll_new)
    return ActivationResult(Z_j, pi_j, kind, False, ll_old)


# ---------------------------------------------------------------------------
# Initialisation


def _kmeans(Y, K, rng: RngStream, iters: int = 25):
    n = Y.shape[0]
    centres = np.empty((K, Y.shape[1]))
    centres[0] = Y[rng.integers(n)]
    d2 = np.sum((Y - centres[0]) ** 2, axis=1)
    for k in range(1, K):
        tot = d2.sum()
        idx = rng.integers(n) if tot <= 0 else int(np.searchsorted(np.cumsum(d2), rng.uniform() * tot))
        centres[k] = Y[min(idx, n - 1)]
        d2 = np.minimum(d2, np.sum((Y - centres[k]) ** 2, axis=1))
    for _ in range(iters):
        lab = np.argmin(((Y[:, None, :] - centres[None]) ** 2).sum(-1), axis=1)
        for k in range(K):
            if np.any(lab == k):
                centres[k] = Y[lab == k].mean(axis=0)
    lab = np.argmin(((Y[:, None, :] - centres[None]) ** 2).sum(-1), axis=1)
    return centres, lab


def prior_draw_state(prior: PriorSpec, J: int, sizes, rng: RngStream, rj_enabled: bool = True) -> ChainState:
    """Forward simulation of every parameter from the prior (assignments included)."""
    K, d = prior.K, prior.d
    theta = prior.t + np.einsum("kij,kj->ki", np.linalg.cholesky(prior.S), rng.normal((K, d)))
    sigma_theta = draw_inverse_wishart(prior.Q, prior.n_theta, rng)
    psi = draw_wishart(prior.H, prior.n_psi, rng)
    # geometric on nu_min, nu_min + 1, ... via inversion
    q = np.exp(-prior.lam)
    u = rng.uniform(K)
    nu = prior.nu_min + np.floor(np.log1p(-u) / np.log(q)).astype(np.int64)
    Lt = np.linalg.cholesky(sigma_theta)
    mu = theta[None] + np.einsum("kil,jkl->jki", Lt, rng.normal((J, K, d)))
    sigma = draw_inverse_wishart(np.broadcast_to(psi, (J, K, d, d)), np.broadcast_to(nu, (J, K)), rng)
    Z = np.ones((J, K), dtype=bool)
    if rj_enabled:
        Z = draw_activation_prior(J, K, prior.c_s, rng)
    pi = np.zeros((J, K + 1))
    x = []
    for j in range(J):
        keep = np.concatenate([[True], Z[j]])
        pi[j, keep] = draw_dirichlet(prior.a[keep], rng)
        u = rng.uniform(int(sizes[j]))
        x.append(np.searchsorted(np.cumsum(pi[j]), u * pi[j].sum(), side="right").clip(0, K).astype(np.intp))
    return ChainState(theta=theta, sigma_theta=sigma_theta, psi=psi, nu=nu, mu=mu, sigma=sigma,
                      pi=pi, Z=Z, x=x, mu0=prior.mu0.copy(), sigma0=prior.sigma0.copy())


def draw_activation_prior(J: int, K: int, c_s: float, rng: RngStream) -> np.ndarray:
    """Independent ``Bernoulli(e^{-c}/(1+e^{-c}))`` patterns conditioned on a nonempty row."""
    p = 1.0 / (1.0 + np.exp(c_s))
    Z = np.zeros((J, K), dtype=bool)
    for j in range(J):
        while True:
            row = rng.uniform(K) < p
            if row.any():
                Z[j] = row
                break
    return Z


def initial_state(data: Dataset, prior: PriorSpec, rng: RngStream, init: InitSpec | None = None) -> ChainState:
    """Deterministic data-driven starting point (or a prior draw).

    Unless given, latent means come from k-means++ on the pooled data and
    are matched to prior locations; covariances are within-cluster
    covariances; ``nu`` starts at ``nu_min + 10``; every component is active.
    """
    init = init or InitSpec()
    K, d, J = prior.K, prior.d, data.J
    if init.from_prior:
        return prior_draw_state(prior, J, data.sizes, rng)
    Y = data.pooled()
    if Y.shape[0] > 20000:
        Y = Y[np.sort(rng.gen.choice(Y.shape[0], 20000, replace=False))]
    pooled_cov = np.atleast_2d(np.cov(Y, rowvar=False)) + 1e-9 * np.eye(d)
    if init.theta is None:
        centres, lab = _kmeans(Y, K, rng)
        from scipy.optimize import linear_sum_assignment

        cost = ((prior.t[:, None, :] - centres[None]) ** 2).sum(-1)
        _, perm = linear_sum_assignment(cost)
        theta = centres[perm]
        lab = np.argsort(perm)[lab]
    else:
        theta = np.array(init.theta, dtype=np.float64).reshape(K, d)
        lab = np.argmin(((Y[:, None, :] - theta[None]) ** 2).sum(-1), axis=1)
    if init.cov is None:
        cov = np.empty((K, d, d))
        for k in range(K):
            pts = Y[lab == k]
            if pts.shape[0] > d + 1:
                cov[k] = np.atleast_2d(np.cov(pts, rowvar=False)) + 1e-6 * np.trace(pooled_cov) / d * np.eye(d)
            else:
                cov[k] = pooled_cov / K
    else:
        cov = np.array(init.cov, dtype=np.float64).reshape(K, d, d)
    nu = (np.full(K, prior.nu_min + 10) if init.nu is None else np.asarray(init.nu)).astype(np.int64)
    psi = cov * (nu - d - 1.0)[:, None, None]
    finite = prior.n_theta > d + 1
    sigma_theta = np.where(finite[:, None, None],
                           prior.Q / np.where(finite, prior.n_theta - d - 1.0, 1.0)[:, None, None], prior.Q)
    Z = np.ones((J, K), dtype=bool) if init.Z is None else np.array(init.Z, dtype=bool)
    pi = np.zeros((J, K + 1))
    for j in range(J):
        pi[j, 0] = 0.01
        pi[j, 1:][Z[j]] = 0.99 / Z[j].sum()
    mu = np.broadcast_to(theta, (J, K, d)).copy()
    sigma = np.broadcast_to(cov, (J, K, d, d)).copy()
    x = [np.zeros(n, dtype=np.intp) for n in data.sizes]
    return ChainState(theta=theta, sigma_theta=sigma_theta, psi=psi, nu=nu, mu=mu, sigma=sigma,
                      pi=pi, Z=Z, x=x, mu0=prior.mu0.copy(), sigma0=prior.sigma0.copy())


# ---------------------------------------------------------------------------
# Sampler


@dataclass
class _Counters:
    nu_proposed: np.ndarray
    nu_accepted: np.ndarray
    birth_proposed: int = 0
    birth_accepted: int = 0
    death_proposed: int = 0
    death_accepted: int = 0
    empty_rejected: int = 0
    jitter: int = 0
    retained: int = 0


class GibbsSampler:
    """Stateful sampler; :func:`run_chain` is the usual entry point.

    Parameters
    ----------
    data : Dataset
    prior : PriorSpec
    config : McmcConfig
    init : InitSpec or ChainState, optional
    prior_only : bool
        Drop the likelihood. Every conditional then reduces to its prior,
        which the test suite uses to check the sampler against forward
        simulation.
    mutation : str, optional
        Deliberate corruption for sampler-validation tests. The only value
        is ``"sigma_drop_prior"``, which drops ``psi`` from the scale of the
        component covariance update.
    """

    MUTATIONS = ("sigma_drop_prior",)

    def __init__(self, data: Dataset, prior: PriorSpec, config: McmcConfig,
                 init: InitSpec | ChainState | None = None, prior_only: bool = False,
                 mutation: str | None = None):
        if mutation is not None and mutation not in self.MUTATIONS:
            raise ConfigError(f"unknown mutation {mutation!r}")
        self.mutation = mutation
        if data.d != prior.d:
            raise ConfigError(f"data has d={data.d} but the prior has d={prior.d}")
        self.prior = prior
        self.config = config
        self.prior_only = prior_only
        self.K, self.d = prior.K, prior.d
        self.rngs = [RngStream(config.seed, j) for j in range(data.J)]
        self.latent_rng = RngStream(config.seed, LATENT_STREAM)
        if isinstance(init, ChainState):
            self.state = init.copy()
        else:
            self.state = initial_state(data, prior, RngStream(config.seed, INIT_STREAM), init)
        if not config.rj_enabled:
            self.state.Z[:] = True
            bad = self.state.pi[:, 1:] <= 0
            if np.any(bad):
                raise ConfigError("initial state has inactive components but activation moves are disabled")
        self.counters = _Counters(np.zeros(self.K, dtype=np.int64), np.zeros(self.K, dtype=np.int64))
        self._S_inv = inv_from_chol(np.linalg.cholesky(prior.S))
        self._H_inv = inv_from_chol(np.linalg.cholesky(prior.H))
        self._S_inv_t = np.einsum("kij,kj->ki", self._S_inv, prior.t)
        self._executor = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
        self.iteration = 0
        self.loglik = np.zeros(data.J)
        self._pred_ids = set(config.predictive_sample_ids)
        self._refresh_latent_cache()
        self.set_data(data)

    # -- caches -----------------------------------------------------------

    @property
    def sigma_chol(self) -> np.ndarray:
        """Cholesky factors of the current component covariances, ``(J, K, d, d)``."""
        return self._chol

    def _refresh_latent_cache(self):
        Lt, _, _ = safe_cholesky(self.state.sigma_theta)
        self._prec_theta = inv_from_chol(Lt)

    def set_data(self, data: Dataset):
        """Swap in a dataset of the same shape and rebuild density caches."""
        if data.J != self.state.J or data.d != self.d:
            raise ConfigError("replacement data must keep J and d")
        self.data = data
        self.Y = [np.ascontiguousarray(s) for s in data.samples]
        L0 = np.linalg.cholesky(self.state.sigma0)
        self._out_chol = L0[None]
        self._out_logdet = logdet_from_chol(L0)[None]
        self._chol, ok, _ = safe_cholesky(self.state.sigma)
        if not np.all(ok):
            raise NumericalError("initial component covariances are not positive definite")
        if len(self.state.x) != data.J or any(x.size != n for x, n in zip(self.state.x, data.sizes)):
            self.state.x = [np.zeros(n, dtype=np.intp) for n in data.sizes]
        self._L = [None] * data.J
        self._W = [None] * data.J
        if not self.prior_only:
            self._col0 = [kernels.component_logdens(Y, self.state.mu0[None], self._out_chol, self._out_logdet)
                          for Y in self.Y]
            for j in range(data.J):
                self._recompute_logdens(j)
        self.soft = None

    def _recompute_logdens(self, j):
        ld = logdet_from_chol(self._chol[j])
        comp = kernels.component_logdens(self.Y[j], self.state.mu[j], self._chol[j], ld)
        self._L[j] = np.concatenate([self._col0[j], comp], axis=1)

    # -- per-sample block -------------------------------------------------

    def _weights(self, j):
        """Row weights for the next assignment draw, rebuilt if stale."""
        if self._W[j] is None:
            P = np.empty_like(self._L[j])
            tot = np.empty(P.shape[0])
            with np.errstate(divide="ignore"):
                kernels.mixture_weights(self._L[j], np.log(self.state.pi[j]), P, tot)
            self._W[j] = (P, tot)
        return self._W[j]

    def _sample_block(self, j: int, record: bool):
        st, pr, rng = self.state, self.prior, self.rngs[j]
        K = self.K
        stats = dict(birth=0, birth_acc=0, death=0, death_acc=0, empty=0, jitter=0, retained=0)
        if self.prior_only:
            counts = np.zeros(K + 1)
            sums = np.zeros((K + 1, self.d))
            outer = np.zeros((K + 1, self.d, self.d))
        else:
            # the weights cached at the end of the previous block are exactly
            # exp(L + log pi) for the current state, so no second pass is needed
            P, tot = self._weights(j)
            x, _ = kernels.assign_from_weights(P, tot, rng.uniform(self.Y[j].shape[0]))
            counts, sums, outer = kernels.suff_stats(self.Y[j], x, K + 1)
            st.x[j] = x
        st.pi[j] = update_pi(counts, pr.a, st.Z[j], rng)
        psi = np.zeros_like(st.psi) if self.mutation == "sigma_drop_prior" else st.psi
        mu, sig, Lch, nret, njit = update_component_params(
            st.mu[j], st.sigma[j], counts[1:], sums[1:], outer[1:], st.theta, st.sigma_theta,
            psi, st.nu.astype(np.float64), rng, prec_theta=self._prec_theta, chol_j=self._chol[j])
        st.mu[j], st.sigma[j], self._chol[j] = mu, sig, Lch
        stats["retained"] += nret
        stats["jitter"] += njit
        ll = None
        if not self.prior_only:
            self._recompute_logdens(j)
            cur = (np.empty_like(self._L[j]), np.empty(self._L[j].shape[0]))
            with np.errstate(divide="ignore"):
                ll = kernels.mixture_weights(self._L[j], np.log(st.pi[j]), *cur)
            self._W[j] = cur
        if self.config.rj_enabled:
            prop = None if self.prior_only else (np.empty_like(self._L[j]), np.empty(self._L[j].shape[0]))
            res = update_activation(self._L[j], st.pi[j], st.Z[j], pr.a, pr.c_s, rng,
                                    prior_only=self.prior_only, loglik_current=ll, weights_out=prop)
            if res.kind == "empty":
                stats["empty"] += 1
            else:
                stats[res.kind] += 1
                stats[res.kind + "_acc"] += int(res.accepted)
            ll = res.loglik
            if res.accepted:
                st.Z[j], st.pi[j] = res.Z, res.pi
                if not self.prior_only:
                    self._W[j] = prop
                    st.x[j], _ = kernels.assign_from_weights(*prop, rng.uniform(self.Y[j].shape[0]))
        if not self.prior_only:
            self.loglik[j] = ll
            if self.soft is not None:
                self.soft[j][np.arange(st.x[j].size), st.x[j]] += 1
        pred = None
        if record and j in self._pred_ids:
            pred = self._predictive_cell(j, rng)
        return stats, pred

    def _predictive_cell(self, j, rng: RngStream):
        st = self.state
        c = int(np.searchsorted(np.cumsum(st.pi[j]), rng.uniform() * st.pi[j].sum(), side="right"))
        c = min(c, self.K)
        z = rng.normal(self.d)
        if c == 0:
            return st.mu0 + self._out_chol[0] @ z
        return st.mu[j, c - 1] + self._chol[j, c - 1] @ z

    # -- latent block -----------------------------------------------------

    def _latent_block(self):
        st, pr, rng = self.state, self.prior, self.latent_rng
        K, d = self.K, self.d
        W = st.Z if self.config.rj_enabled else np.ones_like(st.Z)
        m = W.sum(axis=0).astype(np.float64)
        Wf = W.astype(np.float64)

        # theta | mu, sigma_theta
        mu_sum = np.einsum("jk,jki->ki", Wf, st.mu)
        prec = symmetrize(self._S_inv + m[:, None, None] * self._prec_theta)
        Lp, ok, nj = safe_cholesky(prec)
        b = self._S_inv_t + np.einsum("kij,kj->ki", self._prec_theta, mu_sum)
        LpT = np.swapaxes(Lp, -1, -2)
        mean = np.linalg.solve(LpT, np.linalg.solve(Lp, b[..., None]))[..., 0]
        theta = mean + np.linalg.solve(LpT, rng.normal((K, d))[..., None])[..., 0]
        st.theta = np.where(ok[:, None], theta, st.theta)
        self.counters.jitter += nj
        self.counters.retained += int(np.sum(~ok))

        # sigma_theta | theta, mu
        dev = st.mu - st.theta[None]
        dev_outer = np.einsum("jk,jki,jkl->kil", Wf, dev, dev)
        scale, dof = sigma_theta_conditional(pr.Q, pr.n_theta, dev_outer, m)
        Ls, ok, nj = safe_cholesky(scale)
        draw = _iw_draw_from_chol(Ls, dof, rng)
        _, ok2, _ = safe_cholesky(draw)
        ok &= ok2
        st.sigma_theta = np.where(ok[:, None, None], draw, st.sigma_theta)
        self.counters.jitter += nj
        self.counters.retained += int(np.sum(~ok))

        # psi | sigma, nu
        sig_inv = inv_from_chol(self._chol)
        sig_inv_sum = np.einsum("jk,jkil->kil", Wf, sig_inv)
        Lv, ok, nj = safe_cholesky(symmetrize(self._H_inv + sig_inv_sum))
        V = inv_from_chol(Lv)
        n_post = pr.n_psi + m * st.nu
        LV, ok2, _ = safe_cholesky(V)
        A = bartlett_factor(n_post, d, rng)
        LA = LV @ A
        draw = symmetrize(LA @ np.swapaxes(LA, -1, -2))
        Lpsi, ok3, _ = safe_cholesky(draw)
        ok &= ok2 & ok3
        st.psi = np.where(ok[:, None, None], draw, st.psi)
        self.counters.jitter += nj
        self.counters.retained += int(np.sum(~ok))

        # nu | psi, sigma (Metropolis)
        logdet_psi = logdet_from_chol(safe_cholesky(st.psi)[0])
        logdet_sig = logdet_from_chol(self._chol)
        sum_ld = np.einsum("jk,jk->k", Wf, logdet_sig)
        h = self.config.nu_proposal_halfwidth
        for k in range(K):
            prop = propose_nu(int(st.nu[k]), h, pr.nu_min, rng)
            u = rng.uniform()
            self.counters.nu_proposed[k] += 1
            if prop == st.nu[k]:
                self.counters.nu_accepted[k] += 1
                continue
            lr = nu_log_ratio(float(st.nu[k]), float(prop), logdet_psi[k], sum_ld[k], m[k], pr.lam[k], d)
            if np.log(u) < lr:
                st.nu[k] = prop
                self.counters.nu_accepted[k] += 1
        self._refresh_latent_cache()

    # -- driver -----------------------------------------------------------

    def sweep(self, record: bool = False):
        """One full sweep. Returns predictive draws when ``record`` is true."""
        J = self.state.J
        if self._executor is None:
            results = [self._sample_block(j, record) for j in range(J)]
        else:
            results = list(self._executor.map(lambda j: self._sample_block(j, record), range(J)))
        c = self.counters
        for stats, _ in results:
            c.birth_proposed += stats["birth"]
            c.birth_accepted += stats["birth_acc"]
            c.death_proposed += stats["death"]
            c.death_accepted += stats["death_acc"]
            c.empty_rejected += stats["empty"]
            c.jitter += stats["jitter"]
            c.retained += stats["retained"]
        preds = [results[j][1] for j in self.config.predictive_sample_ids] if record else []
        if record and self.config.predictive_pooled:
            preds.append(self._pooled_cell())
        self._latent_block()
        self.iteration += 1
        return preds

    def _pooled_cell(self):
        sizes = self.data.sizes.astype(np.float64)
        j = int(np.searchsorted(np.cumsum(sizes), self.latent_rng.uniform() * sizes.sum(), side="right"))
        return self._predictive_cell(min(j, self.state.J - 1), self.latent_rng)

    def log_posterior(self) -> float:
        ll = 0.0 if self.prior_only else float(self.loglik.sum())
        return log_prior(self.state, self.prior) + ll

    def run(self) -> Trace:
        cfg = self.config
        J, K, d = self.state.J, self.K, self.d
        for j in cfg.predictive_sample_ids:
            if not 0 <= j < J:
                raise ConfigError(f"predictive sample id {j} out of range")
        R = cfg.production // cfg.thin
        P = len(cfg.predictive_sample_ids) + int(cfg.predictive_pooled)
        tr = dict(
            theta=np.empty((R, K, d)), sigma_theta=np.empty((R, K, d, d)), psi=np.empty((R, K, d, d)),
            nu=np.empty((R, K), dtype=np.int64), mu=np.empty((R, J, K, d)), sigma=np.empty((R, J, K, d, d)),
            pi=np.empty((R, J, K + 1)), Z=np.empty((R, J, K), dtype=bool), log_posterior=np.empty(R),
            log_likelihood=np.empty(R), predictive=np.empty((R, P, d)),
        )
        iters = np.empty(R, dtype=np.int64)
        t0 = time.perf_counter()
        self.soft = None
        r = 0
        total = cfg.burn_in + cfg.production
        try:
            for it in range(total):
                prod = it - cfg.burn_in
                if prod == 0 and cfg.record_soft_assignments and not self.prior_only:
                    self.soft = [np.zeros((n, K + 1), dtype=np.int32) for n in self.data.sizes]
                record = prod >= 0 and (prod + 1) % cfg.thin == 0
                preds = self.sweep(record)
                if record:
                    st = self.state
                    iters[r] = it
                    for name in ("theta", "sigma_theta", "psi", "nu", "mu", "sigma", "pi", "Z"):
                        tr[name][r] = getattr(st, name)
                    tr["log_likelihood"][r] = 0.0 if self.prior_only else self.loglik.sum()
                    tr["log_posterior"][r] = self.log_posterior()
                    if P:
                        tr["predictive"][r] = np.asarray(preds)
                    r += 1
        except NumericalError as exc:
            exc.iteration = self.iteration
            raise
        finally:
            if self._executor is not None:
                self._executor.shutdown()
                self._executor = None
        elapsed = time.perf_counter() - t0
        labels = [self.data.sample_ids[j] for j in cfg.predictive_sample_ids]
        if cfg.predictive_pooled:
            labels.append("pooled")
        soft = self.soft if self.soft is not None else []
        trace = Trace(iterations=iters, predictive_labels=labels, soft_counts=soft,
                      n_soft=cfg.production if soft else 0, **tr)
        trace.diagnostics = self.diagnostics(trace, elapsed)
        return trace

    def diagnostics(self, trace: Trace | None = None, elapsed: float | None = None) -> dict:
        c = self.counters
        out = {
            "iterations": self.iteration,
            "nu_acceptance": (c.nu_accepted / np.maximum(c.nu_proposed, 1)).tolist(),
            "birth_proposed": c.birth_proposed,
            "birth_accepted": c.birth_accepted,
            "death_proposed": c.death_proposed,
            "death_accepted": c.death_accepted,
            "empty_rejected": c.empty_rejected,
            "jitter_count": c.jitter,
            "retained_count": c.retained,
            "kernel_backend": kernels.BACKEND,
            "workers": self.config.workers,
        }
        if trace is not None and trace.n_draws:
            out["label_swaps"] = label_swap_count(trace.theta.mean(axis=0), self.prior.t)
        if elapsed is not None:
            out["wall_time_s"] = elapsed
        return out


def label_swap_count(theta_mean, t) -> int:
    """Pairs ``(k, l)`` whose estimated means sit closer to each other's prior locations.

    Counts pairs where exchanging the two labels strictly reduces the summed
    distance to the prior means ``t``. Identical prior means never count.
    """
    K = theta_mean.shape[0]
    D = np.linalg.norm(theta_mean[:, None, :] - t[None, :, :], axis=-1)
    n = 0
    for k in range(K):
        for l in range(k + 1, K):
            if D[k, l] + D[l, k] < D[k, k] + D[l, l] - 1e-12:
                n += 1
    return n


def run_chain(data: Dataset, prior: PriorSpec, config: McmcConfig,
              init: InitSpec | ChainState | None = None, prior_only: bool = False) -> Trace:
    """Run burn-in and production sweeps and return the thinned trace."""
    return GibbsSampler(data, prior, config, init=init, prior_only=prior_only).run()


__all__ = [
    "McmcConfig", "InitSpec", "Trace", "GibbsSampler", "run_chain", "mu_conditional",
    "sigma_conditional", "theta_conditional", "sigma_theta_conditional", "psi_conditional",
    "nu_log_ratio", "propose_nu", "rj_birth_log_terms", "ActivationResult", "update_assignments", "update_pi",
    "update_component_params", "update_activation", "initial_state", "prior_draw_state",
    "draw_activation_prior", "label_swap_count", "scatter_about",
]
