"""Cholesky-based helpers shared across modules.

All functions accept a single matrix or a stack ``(..., d, d)``.
"""

from __future__ import annotations

import numpy as np

from .errors import NotPositiveDefiniteError

JITTER_SCALE = 1e-10


def cholesky(A: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor, raising :class:`NotPositiveDefiniteError`."""
    A = np.asarray(A, dtype=np.float64)
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefiniteError(f"{what} has non-finite entries")
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"{what} is not positive definite") from exc


def safe_cholesky(A: np.ndarray):
    """Factor a stack, retrying failures once with trace-scaled jitter.

    Returns ``(L, ok, n_jitter)``. Rows where even the jittered matrix fails
    have ``ok`` false and an identity placeholder in ``L``.
    """
    A = np.asarray(A, dtype=np.float64)
    try:
        L = np.linalg.cholesky(A)
        if np.all(np.isfinite(L)):
            return L, np.ones(A.shape[:-2], dtype=bool), 0
    except np.linalg.LinAlgError:
        pass
    d = A.shape[-1]
    flat = A.reshape(-1, d, d)
    L = np.empty_like(flat)
    ok = np.ones(flat.shape[0], dtype=bool)
    n_jitter = 0
    eye = np.eye(d)
    for i, M in enumerate(flat):
        try:
            L[i] = np.linalg.cholesky(M)
            if np.all(np.isfinite(L[i])):
                continue
        except np.linalg.LinAlgError:
            pass
        n_jitter += 1
        tr = np.trace(M)
        try:
            if not np.isfinite(tr) or tr <= 0:
                raise np.linalg.LinAlgError
            L[i] = np.linalg.cholesky(M + JITTER_SCALE * tr * eye)
        except np.linalg.LinAlgError:
            L[i] = eye
            ok[i] = False
    return L.reshape(A.shape), ok.reshape(A.shape[:-2]), n_jitter


def logdet_from_chol(L: np.ndarray) -> np.ndarray:
    """``log|A|`` from the Cholesky factor of ``A``."""
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def tri_inv(L: np.ndarray) -> np.ndarray:
    """Inverse of a lower-triangular factor (batched)."""
    eye = np.broadcast_to(np.eye(L.shape[-1]), L.shape)
    return np.linalg.solve(L, eye)


def inv_from_chol(L: np.ndarray) -> np.ndarray:
    """``A^{-1}`` given ``L`` with ``A = L L^T``."""
    Li = tri_inv(L)
    return np.swapaxes(Li, -1, -2) @ Li


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))
