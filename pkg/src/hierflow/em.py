"""Per-sample Gaussian mixture fits by expectation-maximisation.

This is the independent-fit baseline: each sample is clustered on its own,
so component labels carry no meaning across samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ._linalg import logdet_from_chol
from .distributions import RngStream, _as_rng
from .errors import DataError, NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class EmResult:
    """Best fit over all restarts; ``history`` is its log-likelihood per iteration."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    loglik: float
    history: np.ndarray
    converged: bool
    n_iter: int
    restart_logliks: list = field(default_factory=list)
    n_jitter_restarts: int = 0

    def responsibilities(self, Y) -> np.ndarray:
        lp = _log_joint(np.asarray(Y, dtype=np.float64), self.weights, self.means, np.linalg.cholesky(self.covs))
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def labels(self, Y) -> np.ndarray:
        return np.argmax(self.responsibilities(Y), axis=1)


def _log_joint(Y, weights, means, chols) -> np.ndarray:
    n, d = Y.shape
    out = np.empty((n, weights.size))
    for k in range(weights.size):
        z = np.linalg.solve(chols[k], (Y - means[k]).T)
        out[:, k] = np.log(weights[k]) - 0.5 * (d * LOG_2PI + logdet_from_chol(chols[k])) - 0.5 * np.sum(z * z, 0)
    return out


def kmeans_pp(Y, K: int, rng: RngStream) -> np.ndarray:
    """k-means++ seeding: each new centre is drawn with probability proportional to squared distance."""
    n = Y.shape[0]
    centres = np.empty((K, Y.shape[1]))
    centres[0] = Y[rng.integers(n)]
    d2 = np.sum((Y - centres[0]) ** 2, axis=1)
    for k in range(1, K):
        tot = d2.sum()
        if tot <= 0:
            idx = int(rng.integers(n))
        else:
            idx = min(int(np.searchsorted(np.cumsum(d2), rng.uniform() * tot, side="right")), n - 1)
        centres[k] = Y[idx]
        d2 = np.minimum(d2, np.sum((Y - centres[k]) ** 2, axis=1))
    return centres


class _Degenerate(Exception):
    pass


def _run(Y, K, rng, tol, max_iter, reg):
    n, d = Y.shape
    means = kmeans_pp(Y, K, rng)
    lab = np.argmin(((Y[:, None, :] - means[None]) ** 2).sum(-1), axis=1)
    pooled = np.atleast_2d(np.cov(Y, rowvar=False))
    covs = np.empty((K, d, d))
    weights = np.empty(K)
    for k in range(K):
        pts = Y[lab == k]
        weights[k] = max(pts.shape[0], 1) / n
        covs[k] = np.atleast_2d(np.cov(pts, rowvar=False)) if pts.shape[0] > d else pooled
        covs[k] += reg * np.eye(d)
    weights /= weights.sum()
    history = []
    converged = False
    for _ in range(max_iter):
        try:
            chols = np.linalg.cholesky(covs)
        except np.linalg.LinAlgError as exc:
            raise _Degenerate from exc
        lp = _log_joint(Y, weights, means, chols)
        norm = logsumexp(lp, axis=1, keepdims=True)
        ll = float(norm.sum())
        if not np.isfinite(ll):
            raise _Degenerate
        history.append(ll)
        if len(history) > 1 and history[-1] - history[-2] < tol:
            converged = True
            break
        R = np.exp(lp - norm)
        Nk = R.sum(axis=0)
        if np.any(Nk < d + 1):
            raise _Degenerate
        weights = Nk / n
        means = (R.T @ Y) / Nk[:, None]
        for k in range(K):
            D = Y - means[k]
            covs[k] = (D * R[:, k:k + 1]).T @ D / Nk[k] + reg * np.eye(d)
            covs[k] = 0.5 * (covs[k] + covs[k].T)
    return weights, means, covs, np.array(history), converged


def em_baseline(Y, K: int, rng: RngStream | int = 0, restarts: int = 10, tol: float = 1e-8,
                max_iter: int = 2000, max_jitter_restarts: int = 20) -> EmResult:
    """Fit a ``K``-component Gaussian mixture to one sample.

    Each of ``restarts`` runs starts from k-means++ seeds and stops when the
    log-likelihood gain falls below ``tol``. A run that produces a singular
    or empty component is restarted from fresh seeds with a small ridge
    (``1e-6`` of the mean marker variance) added to every covariance. The
    fit with the highest final log-likelihood is returned.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, d = Y.shape
    if K < 1:
        raise DataError("K must be positive")
    if n <= K * d:
        raise DataError(f"EM needs more than K*d = {K * d} cells, got {n}")
    rng = _as_rng(rng)
    ridge = 1e-6 * float(np.mean(np.var(Y, axis=0)))
    best = None
    lls = []
    n_jit = 0
    for _ in range(restarts):
        reg = 0.0
        while True:
            try:
                w, m, c, hist, conv = _run(Y, K, rng, tol, max_iter, reg)
                break
            except _Degenerate:
                n_jit += 1
                if n_jit > max_jitter_restarts * restarts:
                    raise NumericalError("EM keeps producing degenerate components") from None
                reg = ridge
        lls.append(float(hist[-1]))
        if best is None or hist[-1] > best[3][-1]:
            best = (w, m, c, hist, conv)
    w, m, c, hist, conv = best
    return EmResult(weights=w, means=m, covs=c, loglik=float(hist[-1]), history=hist, converged=conv,
                    n_iter=len(hist), restart_logliks=lls, n_jitter_restarts=n_jit)


__all__ = ["EmResult", "em_baseline", "kmeans_pp"]
