"""Seeded random variates for every distribution the sampler draws from.

Streams are keyed by ``(seed, stream_id)`` through ``numpy.random.SeedSequence``
so that per-sample streams can be consumed by different worker threads in
any order without changing the draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import cholesky, tri_inv
from .errors import NumericalError

# stream ids reserved outside the per-sample range 0..J-1
LATENT_STREAM = 2**32
INIT_STREAM = 2**32 + 1
DATA_STREAM = 2**32 + 2


@dataclass
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)

    # thin wrappers so callers never reach for the generator directly
    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def uniform(self, size=None):
        return self.gen.random(size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size=size)


def _as_rng(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise TypeError("rng must be an RngStream or an integer seed")


def draw_log_gamma(shape, rng: RngStream) -> np.ndarray:
    """Log of Gamma(shape, 1) variates.

    Shapes ``>= 1`` use numpy's Marsaglia-Tsang squeeze/rejection sampler.
    Smaller shapes use the boost ``G(a) = G(a + 1) U^{1/a}`` evaluated on the
    log scale so that tiny shapes do not underflow to zero.
    """
    shape = np.asarray(shape, dtype=np.float64)
    if np.any(~(shape > 0)):
        raise ValueError("gamma shape must be positive")
    small = shape < 1.0
    g = rng.gen.standard_gamma(np.where(small, shape + 1.0, shape))
    out = np.log(g)
    if np.any(small):
        u = rng.gen.random(shape.shape)
        out = np.where(small, out + np.log(u) / shape, out)
    return out


def draw_gamma(shape, rng: RngStream) -> np.ndarray:
    return np.exp(draw_log_gamma(shape, rng))


def draw_chisq(df, rng: RngStream) -> np.ndarray:
    return 2.0 * draw_gamma(0.5 * np.asarray(df, dtype=np.float64), rng)


def draw_mvn(mu, sigma, rng, size=None) -> np.ndarray:
    """``mu + L z`` with ``L`` the lower Cholesky factor of ``sigma``.

    ``mu``/``sigma`` may be stacks ``(..., d)``/``(..., d, d)``; one draw is
    made per stack entry. ``size`` adds leading draw axes for a single
    ``(mu, sigma)`` pair.
    """
    rng = _as_rng(rng)
    mu = np.asarray(mu, dtype=np.float64)
    L = cholesky(np.asarray(sigma, dtype=np.float64), "normal covariance")
    return mvn_from_chol(mu, L, rng, size)


def mvn_from_chol(mu, L, rng: RngStream, size=None) -> np.ndarray:
    d = L.shape[-1]
    if size is None:
        shape = np.broadcast_shapes(np.shape(mu), L.shape[:-1])
        z = rng.gen.standard_normal(shape)
        return mu + np.einsum("...ij,...j->...i", L, z)
    size = (size,) if np.isscalar(size) else tuple(size)
    z = rng.gen.standard_normal(size + (d,))
    return mu + z @ L.T


def bartlett_factor(n, d: int, rng: RngStream) -> np.ndarray:
    """Lower-triangular ``A`` with ``A A^T ~ W(I, n)``; ``n`` may be an array."""
    n = np.asarray(n, dtype=np.float64)
    if np.any(n <= d - 1):
        raise ValueError(f"Wishart degrees of freedom must exceed d - 1 = {d - 1}")
    batch = n.shape
    A = np.zeros(batch + (d, d))
    dfs = n[..., None] - np.arange(d)
    A[..., np.arange(d), np.arange(d)] = np.sqrt(draw_chisq(dfs, rng))
    il = np.tril_indices(d, -1)
    if il[0].size:
        A[..., il[0], il[1]] = rng.gen.standard_normal(batch + (il[0].size,))
    return A


def draw_wishart(V, n, rng) -> np.ndarray:
    """Bartlett draw from ``W(V, n)`` (mean ``n V``); batched over leading axes."""
    rng = _as_rng(rng)
    V = np.asarray(V, dtype=np.float64)
    L = cholesky(V, "Wishart scale")
    d = V.shape[-1]
    n = np.broadcast_to(np.asarray(n, dtype=np.float64), V.shape[:-2])
    A = bartlett_factor(n, d, rng)
    LA = L @ A
    return LA @ np.swapaxes(LA, -1, -2)


def draw_inverse_wishart(psi, nu, rng) -> np.ndarray:
    """Draw from ``IW(psi, nu)`` (mean ``psi/(nu-d-1)``); batched.

    With ``psi = L L^T`` and Bartlett factor ``A`` the result is
    ``(A^{-1} L^T)^T (A^{-1} L^T)``, which is the inverse of
    ``L^{-T} A A^T L^{-1} ~ W(psi^{-1}, nu)``.
    """
    rng = _as_rng(rng)
    psi = np.asarray(psi, dtype=np.float64)
    L = cholesky(psi, "inverse-Wishart scale")
    d = psi.shape[-1]
    nu = np.broadcast_to(np.asarray(nu, dtype=np.float64), psi.shape[:-2])
    A = bartlett_factor(nu, d, rng)
    T = tri_inv(A) @ np.swapaxes(L, -1, -2)
    return np.swapaxes(T, -1, -2) @ T


def draw_dirichlet(alpha, rng) -> np.ndarray:
    """Normalised gamma variates, computed on the log scale."""
    rng = _as_rng(rng)
    alpha = np.asarray(alpha, dtype=np.float64)
    lg = draw_log_gamma(alpha, rng)
    lg -= lg.max(axis=-1, keepdims=True)
    p = np.exp(lg)
    return p / p.sum(axis=-1, keepdims=True)


def draw_beta(a: float, b: float, rng: RngStream) -> float:
    """Beta variate as a ratio of log-gamma draws (safe for small shapes)."""
    la, lb = draw_log_gamma(np.array([a, b]), rng)
    m = max(la, lb)
    return float(np.exp(la - m) / (np.exp(la - m) + np.exp(lb - m)))


def draw_categorical(log_weights, rng) -> int:
    """Gumbel-max draw; adding a constant to all weights leaves it unchanged."""
    rng = _as_rng(rng)
    lw = np.asarray(log_weights, dtype=np.float64)
    if lw.ndim != 1 or lw.size == 0:
        raise ValueError("log_weights must be a non-empty vector")
    if not np.any(np.isfinite(lw)):
        raise NumericalError("all categorical log weights are -inf")
    if np.any(lw == np.inf) or np.any(np.isnan(lw)):
        raise NumericalError("categorical log weights must be finite or -inf")
    g = -np.log(-np.log(rng.gen.random(lw.size)))
    return int(np.argmax(lw + g))
