"""Pure-Python/numpy fallback for the compiled kernels.

Every function here mirrors the signature and the floating-point semantics of
its counterpart in ``_kernels.pyx`` closely enough that results agree to
rounding error. The dip routine is a line-by-line port and agrees exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from ._linalg import safe_cholesky, tri_inv

_LOG_2PI = float(np.log(2.0 * np.pi))


def component_logdens(Y, means, chols, logdets):
    n, d = Y.shape
    m = means.shape[0]
    out = np.empty((n, m), dtype=np.float64)
    for k in range(m):
        z = solve_triangular(chols[k], (Y - means[k]).T, lower=True, check_finite=False)
        out[:, k] = -0.5 * (d * _LOG_2PI + logdets[k]) - 0.5 * np.einsum("ij,ij->j", z, z)
    return out


def sample_assignments(logdens, logpi, u):
    a = logdens + logpi
    mx = a.max(axis=1, keepdims=True)
    p = np.exp(a - mx)
    cum = np.cumsum(p, axis=1)
    tot = cum[:, -1]
    thr = (u * tot)[:, None]
    x = (cum <= thr).sum(axis=1)
    np.minimum(x, a.shape[1] - 1, out=x)
    x = x.astype(np.intp)
    counts = np.bincount(x, minlength=a.shape[1]).astype(np.intp)
    ll = float(np.sum(mx[:, 0] + np.log(tot)))
    return x, counts, ll


def mixture_loglik(logdens, logpi):
    return float(np.sum(logsumexp(logdens + logpi, axis=1)))


def mixture_weights(logdens, logpi, P, tot_out):
    a = logdens + logpi
    mx = a.max(axis=1, keepdims=True)
    np.exp(a - mx, out=P)
    np.sum(P, axis=1, out=tot_out)
    return float(np.sum(mx[:, 0] + np.log(tot_out)))


def assign_from_weights(P, tot, u):
    m = P.shape[1]
    cum = np.cumsum(P, axis=1)
    x = (cum <= (u * tot)[:, None]).sum(axis=1)
    np.minimum(x, m - 1, out=x)
    x = x.astype(np.intp)
    return x, np.bincount(x, minlength=m).astype(np.intp)


def suff_stats(Y, x, m):
    d = Y.shape[1]
    counts = np.bincount(x, minlength=m).astype(np.intp)
    sums = np.zeros((m, d))
    np.add.at(sums, x, Y)
    outer = np.zeros((m, d, d))
    np.add.at(outer, x, Y[:, :, None] * Y[:, None, :])
    return counts, sums, outer


def dip_weighted(x, w):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    m = x.shape[0]
    C = np.empty(m + 1)
    C[0] = 0.0
    np.cumsum(w, out=C[1:])
    x = x.tolist()
    C = C.tolist()
    dip = float(max(w))

    mn = [0] * m
    for j in range(1, m):
        mn[j] = j - 1
        while True:
            a = mn[j]
            b = mn[a]
            if a == 0 or (x[j] - x[a]) * (C[a] - C[b]) < (x[a] - x[b]) * (C[j] - C[a]):
                break
            mn[j] = b
    mj = [0] * m
    mj[m - 1] = m - 1
    for j in range(m - 2, -1, -1):
        mj[j] = j + 1
        while True:
            a = mj[j]
            b = mj[a]
            if a == m - 1 or (x[j] - x[a]) * (C[a + 1] - C[b + 1]) < (x[a] - x[b]) * (C[j + 1] - C[a + 1]):
                break
            mj[j] = b

    low, high = 0, m - 1
    while low < high:
        g = [high]
        while g[-1] > low:
            g.append(mn[g[-1]])
        h = [low]
        while h[-1] < high:
            h.append(mj[h[-1]])
        lg, lh = len(g), len(h)
        ig, ih = lg - 1, lh - 1
        ix, iv = lg - 2, 1
        d = 0.0
        if lg != 2 or lh != 2:
            while True:
                gx = g[ix]
                hv = h[iv]
                if gx > hv:
                    g1 = g[ix + 1]
                    dx = C[hv + 1] - (C[g1] + (x[hv] - x[g1]) * (C[gx] - C[g1]) / (x[gx] - x[g1]))
                    iv += 1
                    if dx >= d:
                        d = dx
                        ig = ix + 1
                        ih = iv - 1
                else:
                    h1 = h[iv - 1]
                    dx = (C[h1 + 1] + (x[gx] - x[h1]) * (C[hv + 1] - C[h1 + 1]) / (x[hv] - x[h1])) - C[gx]
                    ix -= 1
                    if dx >= d:
                        d = dx
                        ig = ix + 1
                        ih = iv
                if ix < 0:
                    ix = 0
                if iv > lh - 1:
                    iv = lh - 1
                # both hulls can share interior vertices once weights differ,
                # so only stop when both walks have reached ``high``
                if ix == 0 and iv == lh - 1:
                    break
        if d < dip:
            break

        dl = 0.0
        for j in range(ig, lg - 1):
            jb, je = g[j + 1], g[j]
            slope = (C[je] - C[jb]) / (x[je] - x[jb])
            for jj in range(jb, je + 1):
                t = C[jj + 1] - (C[jb] + (x[jj] - x[jb]) * slope)
                if t > dl:
                    dl = t
        du = 0.0
        for j in range(ih, lh - 1):
            jb, je = h[j], h[j + 1]
            slope = (C[je + 1] - C[jb + 1]) / (x[je] - x[jb])
            for jj in range(jb, je + 1):
                t = (C[jb + 1] + (x[jj] - x[jb]) * slope) - C[jj]
                if t > du:
                    du = t
        dip = max(dip, dl, du)
        if low == g[ig] and high == h[ih]:
            break
        low, high = g[ig], h[ih]
    return dip


def component_update(mu_old, sigma_old, chol_old, counts, sums, outer, theta, prec_theta, psi, nu,
                     z_mu, chi2, z_off):
    K, d = mu_old.shape
    c = counts[:, None, None]
    Li = tri_inv(chol_old)
    Ps = np.swapaxes(Li, -1, -2) @ Li
    Lm, ok_mu, nj1 = safe_cholesky(prec_theta + c * Ps)
    b = np.einsum("kij,kj->ki", prec_theta, theta) + np.einsum("kij,kj->ki", Ps, sums)
    y = _solve_tri_batch(Lm, b, lower=True) + z_mu
    mu = _solve_tri_batch(np.swapaxes(Lm, -1, -2), y, lower=False)
    mu = np.where(ok_mu[:, None], mu, mu_old)

    ms = mu[:, :, None] * sums[:, None, :]
    scale = psi + outer - ms - np.swapaxes(ms, -1, -2) + c * mu[:, :, None] * mu[:, None, :]
    scale = np.tril(scale) + np.swapaxes(np.tril(scale, -1), -1, -2)
    Lsc, ok_sc, nj2 = safe_cholesky(scale)
    A = np.zeros((K, d, d))
    A[:, np.arange(d), np.arange(d)] = np.sqrt(chi2)
    il = np.tril_indices(d, -1)
    A[:, il[0], il[1]] = z_off
    T = tri_inv(A) @ np.swapaxes(Lsc, -1, -2)
    sig = np.swapaxes(T, -1, -2) @ T
    sig = np.tril(sig) + np.swapaxes(np.tril(sig, -1), -1, -2)
    # factor only where the scale factored, mirroring the compiled kernel
    sig_try = np.where(ok_sc[:, None, None], sig, np.eye(d))
    Lnew, ok_new, nj3 = safe_cholesky(sig_try)
    ok_sig = ok_sc & ok_new
    sig = np.where(ok_sig[:, None, None], sig, sigma_old)
    Lnew = np.where(ok_sig[:, None, None], Lnew, chol_old)
    n_ret = int(np.sum(~ok_mu) + np.sum(~ok_sig))
    return mu, sig, Lnew, n_ret, nj1 + nj2 + nj3


def _solve_tri_batch(L, b, lower):
    out = np.empty_like(b)
    for k in range(L.shape[0]):
        out[k] = solve_triangular(L[k], b[k], lower=lower, check_finite=False)
    return out
