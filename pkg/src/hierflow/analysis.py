"""Posterior summaries, recovery tables, population sizes and PCA."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Trace
from .errors import DataError


def credible_interval(draws, level: float = 0.95, axis: int = 0):
    """Central empirical interval ``(lower, upper)`` of ``draws`` along ``axis``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    draws = np.asarray(draws, dtype=np.float64)
    if draws.shape[axis] == 0:
        raise DataError("no draws to summarise")
    a = 0.5 * (1.0 - level)
    lo, hi = np.quantile(draws, [a, 1.0 - a], axis=axis)
    return lo, hi


def autocorrelation(x) -> np.ndarray:
    """Sample autocorrelation of a 1-D series at every lag, computed by FFT."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    xc = x - x.mean()
    f = np.fft.rfft(xc, 2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n]
    if acov[0] <= 0:
        return np.ones(n) if n else acov
    return acov / acov[0]


def effective_sample_size(x) -> float:
    """Geyer initial-positive-sequence ESS of a 1-D chain.

    Autocorrelations are summed in adjacent pairs until a pair sum turns
    non-positive. A constant chain returns its length.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 4:
        return float(n)
    rho = autocorrelation(x)
    if np.all(rho == 1.0):
        return float(n)
    tau = -1.0
    for m in range(0, n - 1, 2):
        pair = rho[m] + rho[m + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(n / max(tau, 1e-12))


@dataclass
class PosteriorSummary:
    """Trace means, central intervals and activation probabilities.

    ``intervals[name]`` is a ``(lower, upper)`` pair with the shape of the
    matching point estimate. ``recovery`` holds rows comparing estimates
    with known truths when a ground truth was supplied.
    """

    theta: np.ndarray
    latent_cov: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    pi: np.ndarray
    nu: np.ndarray
    activation: np.ndarray
    intervals: dict
    level: float = 0.95
    recovery: list = field(default_factory=list)

    def coverage(self, name: str, truth, mask=None) -> tuple[int, int]:
        """``(inside, total)`` count of ``truth`` entries within the intervals."""
        lo, hi = self.intervals[name]
        truth = np.asarray(truth, dtype=np.float64)
        inside = (truth >= lo) & (truth <= hi)
        if mask is not None:
            inside = inside[mask]
        return int(inside.sum()), int(inside.size)


def _upper_mask(K: int, d: int) -> np.ndarray:
    m = np.zeros((K, d, d), dtype=bool)
    m[:, np.triu_indices(d)[0], np.triu_indices(d)[1]] = True
    return m


def summarize(trace: Trace, truth=None, level: float = 0.95) -> PosteriorSummary:
    """Point estimates, intervals and activation frequencies of a trace.

    With ``truth`` (a :class:`hierflow.synthetic.GroundTruth`) a recovery
    table is built for the latent means, the latent covariances (upper
    triangle) and the sample-level means of active components.
    """
    if trace.n_draws == 0:
        raise DataError("trace holds no draws")
    lc = trace.latent_covariance()
    fams = {"theta": trace.theta, "latent_cov": lc, "mu": trace.mu, "sigma": trace.sigma,
            "pi": trace.pi, "nu": trace.nu.astype(np.float64)}
    intervals = {name: credible_interval(arr, level) for name, arr in fams.items()}
    s = PosteriorSummary(theta=trace.theta.mean(0), latent_cov=lc.mean(0), mu=trace.mu.mean(0),
                         sigma=trace.sigma.mean(0), pi=trace.pi.mean(0), nu=trace.nu.mean(0),
                         activation=trace.activation_probability(), intervals=intervals, level=level)
    if truth is not None:
        s.recovery = recovery_table(s, truth)
    return s


def recovery_table(summary: PosteriorSummary, truth) -> list:
    """Rows of ``(parameter, j, k, coordinate, truth, estimate, lower, upper, difference, covered)``.

    ``difference`` is truth minus posterior mean. Sample-level rows are only
    produced for truly active components.
    """
    rows = []

    def add(name, j, k, coord, t, est, lo, hi):
        rows.append({"parameter": name, "j": j, "k": k, "coordinate": coord, "truth": float(t),
                     "estimate": float(est), "lower": float(lo), "upper": float(hi),
                     "difference": float(t - est), "covered": bool(lo <= t <= hi)})

    K, d = summary.theta.shape
    lo, hi = summary.intervals["theta"]
    for k in range(K):
        for i in range(d):
            add("theta", -1, k, str(i), truth.theta[k, i], summary.theta[k, i], lo[k, i], hi[k, i])
    lo, hi = summary.intervals["latent_cov"]
    tl = truth.latent_covariance()
    for k in range(K):
        for i, l in zip(*np.triu_indices(d)):
            add("latent_cov", -1, k, f"{i},{l}", tl[k, i, l], summary.latent_cov[k, i, l], lo[k, i, l], hi[k, i, l])
    lo, hi = summary.intervals["mu"]
    for j, k in zip(*np.nonzero(truth.Z)):
        for i in range(d):
            add("mu", int(j), int(k), str(i), truth.mu[j, k, i], summary.mu[j, k, i], lo[j, k, i], hi[j, k, i])
    return rows


def latent_recovery_counts(summary: PosteriorSummary, truth) -> dict:
    """Coverage counts for the 12-style latent-mean and 24-style covariance checks."""
    K, d = summary.theta.shape
    th = summary.coverage("theta", truth.theta)
    lc = summary.coverage("latent_cov", truth.latent_covariance(), _upper_mask(K, d))
    return {"theta": th, "latent_cov": lc}


def activation_accuracy(activation: np.ndarray, Z_true: np.ndarray, threshold: float = 0.01) -> dict:
    """Fractions of absent pairs below ``threshold`` and present pairs above ``1 - threshold``."""
    Z_true = np.asarray(Z_true, dtype=bool)
    absent = activation[~Z_true]
    present = activation[Z_true]
    return {
        "absent_ok": float(np.mean(absent < threshold)) if absent.size else 1.0,
        "present_ok": float(np.mean(present > 1.0 - threshold)) if present.size else 1.0,
        "n_absent": int(absent.size),
        "n_present": int(present.size),
    }


def population_sizes(trace: Trace, partition) -> np.ndarray:
    """Posterior-mean population proportions, shape ``(J, M)``.

    Entry ``(j, m)`` sums the posterior-mean weights of the latent clusters
    mapped to population ``m``. Adding :func:`outlier_proportions` makes each
    row sum to one.
    """
    partition = np.asarray(partition, dtype=np.intp)
    if partition.shape != (trace.K,):
        raise DataError(f"partition must have length {trace.K}")
    M = int(partition.max()) + 1
    pm = trace.pi.mean(axis=0)
    out = np.zeros((trace.J, M))
    for k in range(trace.K):
        out[:, partition[k]] += pm[:, k + 1]
    return out


def outlier_proportions(trace: Trace) -> np.ndarray:
    return trace.pi[:, :, 0].mean(axis=0)


@dataclass
class PcaResult:
    """Scores ``(J, r)``, loadings ``(M, r)`` and explained-variance ratios ``(r,)``.

    ``loadings`` are right singular vectors scaled by ``s / sqrt(J - 1)``,
    which gives covariances between markers and components. ``components``
    keeps the unscaled vectors for reconstruction.
    """

    scores: np.ndarray
    loadings: np.ndarray
    explained_variance_ratio: np.ndarray
    singular_values: np.ndarray
    components: np.ndarray
    center: np.ndarray
    scale: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.scores @ self.components.T) * self.scale + self.center


def pca_biplot(X, standardize: bool = False) -> PcaResult:
    """PCA of a ``J x M`` matrix by singular value decomposition.

    Columns are centred; with ``standardize`` they are also scaled to unit
    variance.

    Raises
    ------
    ValueError
        If ``X`` is smaller than 2 x 2 or has rank zero after centring.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 2:
        raise ValueError("PCA needs a matrix with at least two rows and two columns")
    center = X.mean(axis=0)
    Xc = X - center
    scale = np.ones(X.shape[1])
    if standardize:
        sd = Xc.std(axis=0, ddof=1)
        scale = np.where(sd > 0, sd, 1.0)
        Xc = Xc / scale
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    if s.size == 0 or s[0] <= np.finfo(float).eps * max(X.shape) * max(1.0, np.abs(X).max()):
        raise ValueError("matrix has rank zero after centring")
    var = s**2
    ratio = var / var.sum()
    J = X.shape[0]
    return PcaResult(scores=U * s, loadings=Vt.T * s / np.sqrt(J - 1), explained_variance_ratio=ratio,
                     singular_values=s, components=Vt.T, center=center, scale=scale)


__all__ = [
    "autocorrelation", "effective_sample_size", "credible_interval", "PosteriorSummary", "summarize", "recovery_table", "latent_recovery_counts",
    "activation_accuracy", "population_sizes", "outlier_proportions", "PcaResult", "pca_biplot",
]
