"""Prior presets.

``noninformative`` builds weak priors scaled to the pooled data.
``table1`` encodes five known lymphocyte populations as relative marker
levels on the [0, 1]-scaled axes, padded with weakly informed extra
components. The level choices (high 0.8, low 0.1, unspecified 0.5 with a wide
prior) are reconstructions, not measured values.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .model import Dataset, PriorSpec, default_outlier

# marker -> level for each known population; missing markers are unspecified
TABLE1_POPULATIONS = {
    "B cells": {"CD3": "-", "CD19": "+"},
    "Helper T cells": {"CD4": "+", "CD8": "-", "CD3": "+", "CD19": "-"},
    "Cytotoxic T cells": {"CD4": "-", "CD8": "+", "CD3": "+", "CD19": "-"},
    "CD4-CD8- T cells": {"CD4": "-", "CD8": "-", "CD3": "+", "CD19": "-"},
    "NK cells": {"CD3": "-", "CD19": "-"},
}
LEVELS = {"+": 0.8, "-": 0.1}
UNSPECIFIED = 0.5


def _pooled_moments(data: Dataset):
    Y = data.pooled()
    mean = Y.mean(axis=0)
    var = np.var(Y, axis=0)
    if np.any(var <= 0):
        raise ConfigError("every marker needs a positive pooled variance")
    return mean, np.diag(var)


def noninformative(data: Dataset, K: int, t=None, *, s_scale: float = 100.0, q_scale: float = 0.01,
                   lam: float = 0.05, a: float = 1.0, c_s: float = 2.0, outlier_scale: float = 4.0) -> PriorSpec:
    """Weak priors scaled to the pooled marker variances ``D``.

    * ``theta_k ~ N(t_k, s_scale * D)`` with ``t_k`` the pooled mean unless given.
    * ``sigma_theta_k ~ IW(q_scale * D, d + 2)``, whose mean is ``q_scale * D``.
    * ``psi_k ~ W(D, d)``; the scale sits above any within-cluster spread.
    * ``nu_k`` geometric with rate ``lam``; Dirichlet weights all ``a``.
    """
    if K < 1:
        raise ConfigError("K must be positive")
    mean, D = _pooled_moments(data)
    d = data.d
    t = np.tile(mean, (K, 1)) if t is None else np.asarray(t, dtype=np.float64).reshape(K, d)
    mu0, sigma0 = default_outlier(data, outlier_scale)
    return PriorSpec(t=t, S=s_scale * D, Q=q_scale * D, H=D, lam=lam, n_theta=d + 2.0, n_psi=float(d),
                     a=a, c_s=c_s, mu0=mu0, sigma0=sigma0)


def table1(data: Dataset, K: int = 17, *, s_known: float = 0.05**2, s_unknown: float = 1.0,
           q_scale: float = 0.002, n_theta: float | None = None, n_psi: float | None = None,
           lam: float = 0.05, a: float = 1.0, c_s: float = 2.0, outlier_scale: float = 4.0) -> PriorSpec:
    """Five informed populations plus ``K - 5`` weakly informed extras.

    The data must already be scaled so that markers run roughly over
    [0, 1]. Markers are matched to ``CD4, CD8, CD3, CD19`` by name; a known
    population's prior variance on a marker is ``s_known`` where its level
    is specified and ``s_unknown`` otherwise. Extra components are centred
    at 0.5 with variance ``s_unknown`` on every marker.
    """
    names = [m.upper() for m in data.marker_names]
    missing = [m for m in ("CD4", "CD8", "CD3", "CD19") if m not in names]
    if missing:
        raise ConfigError(f"table1 preset needs markers CD4, CD8, CD3, CD19; missing {missing}")
    n_known = len(TABLE1_POPULATIONS)
    if K < n_known:
        raise ConfigError(f"table1 preset needs K >= {n_known}")
    d = data.d
    t = np.full((K, d), UNSPECIFIED)
    Sd = np.full((K, d), s_unknown)
    for k, levels in enumerate(TABLE1_POPULATIONS.values()):
        for marker, lvl in levels.items():
            i = names.index(marker)
            t[k, i] = LEVELS[lvl]
            Sd[k, i] = s_known
    S = np.stack([np.diag(s) for s in Sd])
    n_theta = float(d + 2) if n_theta is None else float(n_theta)
    n_psi = float(d) if n_psi is None else float(n_psi)
    Q = q_scale * np.eye(d) * (n_theta - d - 1.0)
    H = 0.01 * np.eye(d)
    mu0, sigma0 = default_outlier(data, outlier_scale)
    return PriorSpec(t=t, S=S, Q=Q, H=H, lam=lam, n_theta=n_theta, n_psi=n_psi, a=a, c_s=c_s,
                     mu0=mu0, sigma0=sigma0)


PRESETS = {"noninformative": noninformative, "table1": table1}


__all__ = ["noninformative", "table1", "PRESETS", "TABLE1_POPULATIONS", "LEVELS"]
