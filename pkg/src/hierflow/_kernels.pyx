# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Must stay call-compatible with ``_kernels_py``."""

import numpy as np

from libc.math cimport exp, log, sqrt, isfinite, INFINITY
from libc.stdlib cimport malloc, free

cdef double LOG_2PI = 1.8378770664093453
# exp(-60) is below half an ulp of any row total (which is >= 1), so such
# terms cannot change a sum of fewer than ~1e9 entries
cdef double SKIP_BELOW = -60.0
# matches _linalg.JITTER_SCALE
cdef double JITTER_SCALE = 1e-10


def component_logdens(const double[:, ::1] Y, const double[:, ::1] means,
                      const double[:, :, ::1] chols, const double[::1] logdets):
    """Gaussian log densities of every row of ``Y`` under every component.

    ``chols[k]`` is the lower Cholesky factor of component k's covariance and
    ``logdets[k]`` its log determinant.
    """
    cdef Py_ssize_t n = Y.shape[0], d = Y.shape[1], m = means.shape[0]
    cdef Py_ssize_t i, k, r, c
    cdef double s, q, const, zr
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double *z = <double *> malloc(d * sizeof(double))
    cdef double *rdiag = <double *> malloc(d * sizeof(double))
    if z == NULL or rdiag == NULL:
        free(z)
        free(rdiag)
        raise MemoryError()
    try:
        with nogil:
            for k in range(m):
                const = -0.5 * (d * LOG_2PI + logdets[k])
                for r in range(d):
                    rdiag[r] = 1.0 / chols[k, r, r]
                for i in range(n):
                    q = 0.0
                    for r in range(d):
                        s = Y[i, r] - means[k, r]
                        for c in range(r):
                            s = s - chols[k, r, c] * z[c]
                        zr = s * rdiag[r]
                        z[r] = zr
                        q = q + zr * zr
                    o[i, k] = const - 0.5 * q
    finally:
        free(z)
        free(rdiag)
    return out


def sample_assignments(const double[:, ::1] logdens, const double[::1] logpi,
                       const double[::1] u):
    """Inverse-CDF categorical draw per row with weights ``exp(logdens + logpi)``.

    Returns ``(x, counts, loglik)`` where ``loglik`` is the mixture
    log-likelihood of all rows under ``logpi``.
    """
    cdef Py_ssize_t n = logdens.shape[0], m = logdens.shape[1]
    cdef Py_ssize_t i, k, sel
    cdef double mx, v, tot, thr, acc, ll = 0.0
    x = np.empty(n, dtype=np.intp)
    counts = np.zeros(m, dtype=np.intp)
    cdef Py_ssize_t[::1] xv = x
    cdef Py_ssize_t[::1] cv = counts
    cdef double *p = <double *> malloc(m * sizeof(double))
    if p == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(n):
                mx = -INFINITY
                for k in range(m):
                    v = logdens[i, k] + logpi[k]
                    if v > mx:
                        mx = v
                tot = 0.0
                for k in range(m):
                    v = logdens[i, k] + logpi[k] - mx
                    if v > SKIP_BELOW:
                        p[k] = exp(v)
                    else:
                        p[k] = 0.0
                    tot = tot + p[k]
                thr = u[i] * tot
                acc = 0.0
                sel = m - 1
                for k in range(m):
                    acc = acc + p[k]
                    if acc > thr:
                        sel = k
                        break
                xv[i] = sel
                cv[sel] += 1
                ll = ll + mx + log(tot)
    finally:
        free(p)
    return x, counts, ll


def mixture_loglik(const double[:, ::1] logdens, const double[::1] logpi):
    """Sum over rows of ``logsumexp(logdens[i] + logpi)``."""
    cdef Py_ssize_t n = logdens.shape[0], m = logdens.shape[1]
    cdef Py_ssize_t i, k
    cdef double mx, v, tot, ll = 0.0
    with nogil:
        for i in range(n):
            mx = -INFINITY
            for k in range(m):
                v = logdens[i, k] + logpi[k]
                if v > mx:
                    mx = v
            tot = 0.0
            for k in range(m):
                v = logdens[i, k] + logpi[k] - mx
                if v > SKIP_BELOW:
                    tot = tot + exp(v)
            ll = ll + mx + log(tot)
    return ll


def mixture_weights(const double[:, ::1] logdens, const double[::1] logpi,
                    double[:, ::1] P, double[::1] tot_out):
    """Like ``mixture_loglik`` but also stores ``exp(logdens + logpi - rowmax)``.

    ``P`` and ``tot_out`` receive the unnormalised row weights and their row
    sums, which :func:`assign_from_weights` turns into categorical draws.
    """
    cdef Py_ssize_t n = logdens.shape[0], m = logdens.shape[1]
    cdef Py_ssize_t i, k
    cdef double mx, v, e, tot, ll = 0.0
    with nogil:
        for i in range(n):
            mx = -INFINITY
            for k in range(m):
                v = logdens[i, k] + logpi[k]
                if v > mx:
                    mx = v
            tot = 0.0
            for k in range(m):
                v = logdens[i, k] + logpi[k] - mx
                if v > SKIP_BELOW:
                    e = exp(v)
                else:
                    e = 0.0
                P[i, k] = e
                tot = tot + e
            tot_out[i] = tot
            ll = ll + mx + log(tot)
    return ll


def assign_from_weights(const double[:, ::1] P, const double[::1] tot, const double[::1] u):
    """Inverse-CDF draw per row from unnormalised weights ``P``."""
    cdef Py_ssize_t n = P.shape[0], m = P.shape[1]
    cdef Py_ssize_t i, k, sel
    cdef double thr, acc
    x = np.empty(n, dtype=np.intp)
    counts = np.zeros(m, dtype=np.intp)
    cdef Py_ssize_t[::1] xv = x
    cdef Py_ssize_t[::1] cv = counts
    with nogil:
        for i in range(n):
            thr = u[i] * tot[i]
            acc = 0.0
            sel = m - 1
            for k in range(m):
                acc = acc + P[i, k]
                if acc > thr:
                    sel = k
                    break
            xv[i] = sel
            cv[sel] += 1
    return x, counts


def suff_stats(const double[:, ::1] Y, const Py_ssize_t[::1] x, Py_ssize_t m):
    """Per-component counts, sums and raw second moments ``sum y y^T``."""
    cdef Py_ssize_t n = Y.shape[0], d = Y.shape[1]
    cdef Py_ssize_t i, k, r, c
    counts = np.zeros(m, dtype=np.intp)
    sums = np.zeros((m, d), dtype=np.float64)
    outer = np.zeros((m, d, d), dtype=np.float64)
    cdef Py_ssize_t[::1] cv = counts
    cdef double[:, ::1] sv = sums
    cdef double[:, :, ::1] ov = outer
    with nogil:
        for i in range(n):
            k = x[i]
            cv[k] += 1
            for r in range(d):
                sv[k, r] += Y[i, r]
                for c in range(r + 1):
                    ov[k, r, c] += Y[i, r] * Y[i, c]
        for k in range(m):
            for r in range(d):
                for c in range(r):
                    ov[k, c, r] = ov[k, r, c]
    return counts, sums, outer


def dip_weighted(const double[::1] x, const double[::1] w):
    """Unnormalised dip of the weighted ECDF, in cumulative-weight units.

    ``x`` must be strictly increasing with at least two entries and ``w``
    positive. The caller divides by twice the total weight.
    """
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t i, j, a, b, jj, jb, je
    cdef Py_ssize_t low, high, lg, lh, ig, ih, ix, iv, gx, hv, g1, h1
    cdef double dip, d, dx, dl, du, t, slope
    cum_arr = np.empty(m + 1, dtype=np.float64)
    cdef double[::1] C = cum_arr
    mn_arr = np.empty(m, dtype=np.intp)
    mj_arr = np.empty(m, dtype=np.intp)
    g_arr = np.empty(m, dtype=np.intp)
    h_arr = np.empty(m, dtype=np.intp)
    cdef Py_ssize_t[::1] mn = mn_arr
    cdef Py_ssize_t[::1] mj = mj_arr
    cdef Py_ssize_t[::1] g = g_arr
    cdef Py_ssize_t[::1] h = h_arr

    with nogil:
        C[0] = 0.0
        dip = 0.0
        for i in range(m):
            C[i + 1] = C[i] + w[i]
            if w[i] > dip:
                dip = w[i]
        # lower corners sit at C[i], upper corners at C[i + 1]
        mn[0] = 0
        for j in range(1, m):
            mn[j] = j - 1
            while True:
                a = mn[j]
                b = mn[a]
                if a == 0 or (x[j] - x[a]) * (C[a] - C[b]) < (x[a] - x[b]) * (C[j] - C[a]):
                    break
                mn[j] = b
        mj[m - 1] = m - 1
        for j in range(m - 2, -1, -1):
            mj[j] = j + 1
            while True:
                a = mj[j]
                b = mj[a]
                if a == m - 1 or (x[j] - x[a]) * (C[a + 1] - C[b + 1]) < (x[a] - x[b]) * (C[j + 1] - C[a + 1]):
                    break
                mj[j] = b

        low = 0
        high = m - 1
        # with unequal weights the modal interval can shrink to one point
        while low < high:
            lg = 0
            g[lg] = high
            while g[lg] > low:
                g[lg + 1] = mn[g[lg]]
                lg += 1
            lg += 1
            lh = 0
            h[lh] = low
            while h[lh] < high:
                h[lh + 1] = mj[h[lh]]
                lh += 1
            lh += 1

            ig = lg - 1
            ih = lh - 1
            ix = lg - 2
            iv = 1
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
                    # both hulls can share interior vertices once weights
                    # differ, so only stop when both walks reach ``high``
                    if ix == 0 and iv == lh - 1:
                        break
            if d < dip:
                break

            dl = 0.0
            for j in range(ig, lg - 1):
                jb = g[j + 1]
                je = g[j]
                slope = (C[je] - C[jb]) / (x[je] - x[jb])
                for jj in range(jb, je + 1):
                    t = C[jj + 1] - (C[jb] + (x[jj] - x[jb]) * slope)
                    if t > dl:
                        dl = t
            du = 0.0
            for j in range(ih, lh - 1):
                jb = h[j]
                je = h[j + 1]
                slope = (C[je + 1] - C[jb + 1]) / (x[je] - x[jb])
                for jj in range(jb, je + 1):
                    t = (C[jb + 1] + (x[jj] - x[jb]) * slope) - C[jj]
                    if t > du:
                        du = t
            if dl > dip:
                dip = dl
            if du > dip:
                dip = du
            if low == g[ig] and high == h[ih]:
                break
            low = g[ig]
            high = h[ih]
    return dip


cdef int _chol(double *A, double *L, Py_ssize_t d) noexcept nogil:
    """Lower Cholesky of row-major ``A`` into ``L``; returns 0 on success."""
    cdef Py_ssize_t i, j, k
    cdef double s
    for i in range(d * d):
        L[i] = 0.0
    for j in range(d):
        s = A[j * d + j]
        for k in range(j):
            s = s - L[j * d + k] * L[j * d + k]
        if not (s > 0.0) or not isfinite(s):
            return 1
        L[j * d + j] = sqrt(s)
        for i in range(j + 1, d):
            s = A[i * d + j]
            for k in range(j):
                s = s - L[i * d + k] * L[j * d + k]
            L[i * d + j] = s / L[j * d + j]
            if not isfinite(L[i * d + j]):
                return 1
    return 0


cdef int _chol_jitter(double *A, double *L, Py_ssize_t d, Py_ssize_t *n_jitter) noexcept nogil:
    """``_chol`` with one retry on ``A + JITTER * trace(A) I``; returns 0 on success."""
    cdef Py_ssize_t i
    cdef double tr = 0.0
    if _chol(A, L, d) == 0:
        return 0
    n_jitter[0] += 1
    for i in range(d):
        tr = tr + A[i * d + i]
    if not (tr > 0.0) or not isfinite(tr):
        return 1
    for i in range(d):
        A[i * d + i] = A[i * d + i] + JITTER_SCALE * tr
    return _chol(A, L, d)


cdef void _tri_inv(double *L, double *Li, Py_ssize_t d) noexcept nogil:
    """Inverse of lower-triangular ``L`` by forward substitution."""
    cdef Py_ssize_t i, j, k
    cdef double s
    for i in range(d * d):
        Li[i] = 0.0
    for j in range(d):
        Li[j * d + j] = 1.0 / L[j * d + j]
        for i in range(j + 1, d):
            s = 0.0
            for k in range(j, i):
                s = s - L[i * d + k] * Li[k * d + j]
            Li[i * d + j] = s / L[i * d + i]


def component_update(const double[:, ::1] mu_old, const double[:, :, ::1] sigma_old,
                     const double[:, :, ::1] chol_old, const double[::1] counts,
                     const double[:, ::1] sums, const double[:, :, ::1] outer,
                     const double[:, ::1] theta, const double[:, :, ::1] prec_theta,
                     const double[:, :, ::1] psi, const double[::1] nu,
                     const double[:, ::1] z_mu, const double[:, ::1] chi2,
                     const double[:, ::1] z_off):
    """Conditional draws of every component mean and covariance of one sample.

    ``mu`` is drawn given the old covariance, then the covariance from the
    inverse-Wishart given the new ``mu``. The standard normals ``z_mu``, the
    Bartlett chi-square variates ``chi2`` (degrees of freedom
    ``nu + counts - i``) and the Bartlett off-diagonal normals ``z_off`` are
    supplied by the caller. A component whose factorisation fails even after
    jitter keeps its old values.

    Returns ``(mu, sigma, chol, n_retained, n_jitter)``.
    """
    cdef Py_ssize_t K = mu_old.shape[0], d = mu_old.shape[1]
    cdef Py_ssize_t k, i, l, r, q
    cdef Py_ssize_t n_ret = 0, n_jit = 0
    cdef double c, s
    mu_new = np.empty((K, d))
    sig_new = np.empty((K, d, d))
    chol_new = np.empty((K, d, d))
    cdef double[:, ::1] mo = mu_new
    cdef double[:, :, ::1] so = sig_new
    cdef double[:, :, ::1] lo = chol_new
    cdef double *buf = <double *> malloc((7 * d * d + 2 * d) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double *Li = buf
    cdef double *Ps = buf + d * d
    cdef double *M = buf + 2 * d * d
    cdef double *Lm = buf + 3 * d * d
    cdef double *A = buf + 4 * d * d
    cdef double *Ai = buf + 5 * d * d
    cdef double *T = buf + 6 * d * d
    cdef double *b = buf + 7 * d * d
    cdef double *mu = b + d
    try:
        with nogil:
            for k in range(K):
                c = counts[k]
                # sigma_old^{-1} = Li^T Li
                for i in range(d):
                    for l in range(d):
                        M[i * d + l] = chol_old[k, i, l]
                _tri_inv(M, Li, d)
                for i in range(d):
                    for l in range(d):
                        s = 0.0
                        for r in range(max(i, l), d):
                            s = s + Li[r * d + i] * Li[r * d + l]
                        Ps[i * d + l] = s
                # mu | sigma_old: precision prec_theta + c Ps
                for i in range(d):
                    for l in range(d):
                        M[i * d + l] = prec_theta[k, i, l] + c * Ps[i * d + l]
                if _chol_jitter(M, Lm, d, &n_jit) != 0:
                    n_ret += 1
                    for i in range(d):
                        mu[i] = mu_old[k, i]
                else:
                    for i in range(d):
                        s = 0.0
                        for l in range(d):
                            s = s + prec_theta[k, i, l] * theta[k, l] + Ps[i * d + l] * sums[k, l]
                        b[i] = s
                    # mu = Lm^{-T} (Lm^{-1} b + z)
                    for i in range(d):
                        s = b[i]
                        for l in range(i):
                            s = s - Lm[i * d + l] * b[l]
                        b[i] = s / Lm[i * d + i]
                    for i in range(d):
                        b[i] = b[i] + z_mu[k, i]
                    for i in range(d - 1, -1, -1):
                        s = b[i]
                        for l in range(i + 1, d):
                            s = s - Lm[l * d + i] * mu[l]
                        mu[i] = s / Lm[i * d + i]
                for i in range(d):
                    mo[k, i] = mu[i]
                # sigma | mu: IW(psi + scatter about mu, nu + c)
                for i in range(d):
                    for l in range(i + 1):
                        s = (psi[k, i, l] + outer[k, i, l] - mu[i] * sums[k, l] - sums[k, i] * mu[l]
                             + c * mu[i] * mu[l])
                        M[i * d + l] = s
                        M[l * d + i] = s
                if _chol_jitter(M, Lm, d, &n_jit) == 0:
                    for i in range(d * d):
                        A[i] = 0.0
                    q = 0
                    for i in range(d):
                        A[i * d + i] = sqrt(chi2[k, i])
                        for l in range(i):
                            A[i * d + l] = z_off[k, q]
                            q += 1
                    _tri_inv(A, Ai, d)
                    # T = A^{-1} Lm^T, sigma = T^T T
                    for i in range(d):
                        for l in range(d):
                            s = 0.0
                            for r in range(min(i, l) + 1):
                                s = s + Ai[i * d + r] * Lm[l * d + r]
                            T[i * d + l] = s
                    for i in range(d):
                        for l in range(i + 1):
                            s = 0.0
                            for r in range(d):
                                s = s + T[r * d + i] * T[r * d + l]
                            M[i * d + l] = s
                            M[l * d + i] = s
                    for i in range(d * d):
                        A[i] = M[i]
                    if _chol_jitter(A, Lm, d, &n_jit) == 0:
                        for i in range(d):
                            for l in range(d):
                                so[k, i, l] = M[i * d + l]
                                lo[k, i, l] = Lm[i * d + l]
                        continue
                n_ret += 1
                for i in range(d):
                    for l in range(d):
                        so[k, i, l] = sigma_old[k, i, l]
                        lo[k, i, l] = chol_old[k, i, l]
    finally:
        free(buf)
    return mu_new, sig_new, chol_new, int(n_ret), int(n_jit)
