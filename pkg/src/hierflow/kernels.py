"""Backend selection for the numeric hot loops.

The compiled extension is used when it imports cleanly. Setting
``HIERFLOW_PURE_PYTHON=1`` forces the numpy fallback, which is how the test
suite checks that both backends agree.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

_force_py = os.environ.get("HIERFLOW_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined,no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _kernels_py
        BACKEND = "python"


def component_logdens(Y, means, chols, logdets):
    """Log N(y_i; means[k], L_k L_k^T) for every row i and component k."""
    return _impl.component_logdens(
        np.ascontiguousarray(Y, dtype=np.float64),
        np.ascontiguousarray(means, dtype=np.float64),
        np.ascontiguousarray(chols, dtype=np.float64),
        np.ascontiguousarray(logdets, dtype=np.float64),
    )


def sample_assignments(logdens, logpi, u):
    """Draw one categorical index per row by inverse CDF on uniforms ``u``.

    Entries of ``logpi`` may be ``-inf``; those columns are never chosen.
    Returns ``(x, counts, loglik)``.
    """
    return _impl.sample_assignments(
        np.ascontiguousarray(logdens, dtype=np.float64),
        np.ascontiguousarray(logpi, dtype=np.float64),
        np.ascontiguousarray(u, dtype=np.float64),
    )


def mixture_loglik(logdens, logpi) -> float:
    """Sum of per-row log-sum-exp of ``logdens + logpi``."""
    return float(
        _impl.mixture_loglik(
            np.ascontiguousarray(logdens, dtype=np.float64),
            np.ascontiguousarray(logpi, dtype=np.float64),
        )
    )


def suff_stats(Y, x, m: int):
    """Counts, sums and raw outer-product sums grouped by label ``x``."""
    return _impl.suff_stats(
        np.ascontiguousarray(Y, dtype=np.float64),
        np.ascontiguousarray(x, dtype=np.intp),
        int(m),
    )


def dip_weighted(x, w) -> float:
    """Unnormalised weighted dip; see :func:`hierflow.dip.dip_statistic`."""
    return float(
        _impl.dip_weighted(
            np.ascontiguousarray(x, dtype=np.float64),
            np.ascontiguousarray(w, dtype=np.float64),
        )
    )


def mixture_weights(logdens, logpi, P, tot) -> float:
    """Mixture log-likelihood that also fills row weights ``P`` and totals ``tot``.

    ``P`` and ``tot`` must be C-contiguous float64 arrays of shape
    ``logdens.shape`` and ``(n,)``; they are written in place.
    """
    return float(
        _impl.mixture_weights(
            np.ascontiguousarray(logdens, dtype=np.float64),
            np.ascontiguousarray(logpi, dtype=np.float64),
            P,
            tot,
        )
    )


def assign_from_weights(P, tot, u):
    """Inverse-CDF draws from the row weights of :func:`mixture_weights`.

    Returns ``(x, counts)``.
    """
    return _impl.assign_from_weights(P, tot, np.ascontiguousarray(u, dtype=np.float64))


def component_update(mu_old, sigma_old, chol_old, counts, sums, outer, theta, prec_theta, psi, nu,
                     z_mu, chi2, z_off):
    """Gibbs draws of all component means and covariances of one sample.

    See ``_kernels.component_update``; the random variates are supplied so
    that both backends consume the stream identically.
    """
    f = np.ascontiguousarray
    return _impl.component_update(
        f(mu_old, dtype=np.float64), f(sigma_old, dtype=np.float64), f(chol_old, dtype=np.float64),
        f(counts, dtype=np.float64), f(sums, dtype=np.float64), f(outer, dtype=np.float64),
        f(theta, dtype=np.float64), f(prec_theta, dtype=np.float64), f(psi, dtype=np.float64),
        f(nu, dtype=np.float64), f(z_mu, dtype=np.float64), f(chi2, dtype=np.float64),
        f(z_off, dtype=np.float64).reshape(len(mu_old), -1),
    )
