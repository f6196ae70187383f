# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics match ``mprim._kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY

cnp.import_array()

DEF MAX_DEPTH = 48


cdef inline double _speed(const double[:, :, ::1] c, Py_ssize_t k, double u) noexcept nogil:
    cdef double s = 0.0, d
    cdef Py_ssize_t ax
    for ax in range(c.shape[2]):
        d = (3.0 * c[0, k, ax] * u + 2.0 * c[1, k, ax]) * u + c[2, k, ax]
        s += d * d
    return sqrt(s)


cdef double _asr(const double[:, :, ::1] c, Py_ssize_t k, double a, double b,
                 double fa, double fm, double fb, double whole, double eps,
                 int depth) noexcept nogil:
    cdef double m = 0.5 * (a + b)
    cdef double lm = 0.5 * (a + m)
    cdef double rm = 0.5 * (m + b)
    cdef double flm = _speed(c, k, lm)
    cdef double frm = _speed(c, k, rm)
    cdef double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    cdef double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    cdef double delta = left + right - whole
    if depth <= 0 or fabs(delta) <= 15.0 * eps:
        return left + right + delta / 15.0
    return (_asr(c, k, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
            + _asr(c, k, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1))


def arc_length_pieces(const double[:, :, ::1] c, const cnp.int64_t[::1] piece, const double[::1] a,
                      const double[::1] b, double tol):
    """Integral of the speed of polynomial piece ``piece[i]`` over local
    coordinates ``[a[i], b[i]]`` by adaptive Simpson, ``tol`` per piece."""
    cdef Py_ssize_t n = piece.shape[0], i, k
    cdef double fa, fm, fb, m, whole
    out = np.zeros(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            if b[i] <= a[i]:
                continue
            k = piece[i]
            m = 0.5 * (a[i] + b[i])
            fa = _speed(c, k, a[i])
            fm = _speed(c, k, m)
            fb = _speed(c, k, b[i])
            whole = (b[i] - a[i]) / 6.0 * (fa + 4.0 * fm + fb)
            o[i] = _asr(c, k, a[i], b[i], fa, fm, fb, whole, tol, MAX_DEPTH)
    return out


def nearest(const double[:, ::1] pts, const double[:, ::1] ref):
    """For every row of ``pts`` the Euclidean distance to, and index of, the
    closest row of ``ref`` (lowest index on ties)."""
    cdef Py_ssize_t n = pts.shape[0], m = ref.shape[0], d = pts.shape[1]
    cdef Py_ssize_t i, j, ax, best
    cdef double s, diff, bd
    dist = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    cdef double[::1] dv = dist
    cdef cnp.int64_t[::1] iv = idx
    with nogil:
        for i in range(n):
            bd = INFINITY
            best = 0
            for j in range(m):
                s = 0.0
                for ax in range(d):
                    diff = pts[i, ax] - ref[j, ax]
                    s += diff * diff
                if s < bd:
                    bd = s
                    best = j
            dv[i] = sqrt(bd)
            iv[i] = best
    return dist, idx


def smo_solve(const double[:, ::1] K, const double[::1] y, double C, double eps, long max_iter):
    """Second-order working-set SMO for the soft-margin SVM dual.

    Returns ``(alpha, rho, iterations, converged)``; the decision function is
    ``sum_i alpha_i y_i K(x_i, x) - rho``.
    """
    cdef Py_ssize_t n = y.shape[0], t, i, j, it = 0
    cdef double TAU = 1e-12
    alpha_arr = np.zeros(n)
    G_arr = -np.ones(n)
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] G = G_arr
    cdef double Gmax, Gmax2, obj_min, grad_diff, quad, obj, delta, diff, s
    cdef double old_i, old_j, dai, daj, yG, ub, lb, sum_free
    cdef long nr_free
    cdef Py_ssize_t gmin_idx
    cdef bint converged = False
    with nogil:
        while it < max_iter:
            Gmax = -INFINITY
            Gmax2 = -INFINITY
            i = -1
            for t in range(n):
                if y[t] > 0:
                    if alpha[t] < C and -G[t] >= Gmax:
                        Gmax = -G[t]
                        i = t
                else:
                    if alpha[t] > 0 and G[t] >= Gmax:
                        Gmax = G[t]
                        i = t
            if i < 0:
                converged = True
                break
            gmin_idx = -1
            obj_min = INFINITY
            for t in range(n):
                if y[t] > 0:
                    if alpha[t] > 0:
                        grad_diff = Gmax + G[t]
                        if G[t] >= Gmax2:
                            Gmax2 = G[t]
                        if grad_diff > 0:
                            quad = K[i, i] + K[t, t] - 2.0 * K[i, t]
                            if quad <= 0:
                                quad = TAU
                            obj = -(grad_diff * grad_diff) / quad
                            if obj <= obj_min:
                                gmin_idx = t
                                obj_min = obj
                else:
                    if alpha[t] < C:
                        grad_diff = Gmax - G[t]
                        if -G[t] >= Gmax2:
                            Gmax2 = -G[t]
                        if grad_diff > 0:
                            quad = K[i, i] + K[t, t] - 2.0 * K[i, t]
                            if quad <= 0:
                                quad = TAU
                            obj = -(grad_diff * grad_diff) / quad
                            if obj <= obj_min:
                                gmin_idx = t
                                obj_min = obj
            if Gmax + Gmax2 < eps or gmin_idx < 0:
                converged = True
                break
            j = gmin_idx
            old_i = alpha[i]
            old_j = alpha[j]
            if y[i] != y[j]:
                quad = K[i, i] + K[j, j] + 2.0 * (y[i] * y[j] * K[i, j])
                if quad <= 0:
                    quad = TAU
                delta = (-G[i] - G[j]) / quad
                diff = alpha[i] - alpha[j]
                alpha[i] += delta
                alpha[j] += delta
                if diff > 0:
                    if alpha[j] < 0:
                        alpha[j] = 0
                        alpha[i] = diff
                else:
                    if alpha[i] < 0:
                        alpha[i] = 0
                        alpha[j] = -diff
                if diff > 0:
                    if alpha[i] > C:
                        alpha[i] = C
                        alpha[j] = C - diff
                else:
                    if alpha[j] > C:
                        alpha[j] = C
                        alpha[i] = C + diff
            else:
                quad = K[i, i] + K[j, j] - 2.0 * (y[i] * y[j] * K[i, j])
                if quad <= 0:
                    quad = TAU
                delta = (G[i] - G[j]) / quad
                s = alpha[i] + alpha[j]
                alpha[i] -= delta
                alpha[j] += delta
                if s > C:
                    if alpha[i] > C:
                        alpha[i] = C
                        alpha[j] = s - C
                else:
                    if alpha[j] < 0:
                        alpha[j] = 0
                        alpha[i] = s
                if s > C:
                    if alpha[j] > C:
                        alpha[j] = C
                        alpha[i] = s - C
                else:
                    if alpha[i] < 0:
                        alpha[i] = 0
                        alpha[j] = s
            dai = alpha[i] - old_i
            daj = alpha[j] - old_j
            for t in range(n):
                G[t] += y[t] * (y[i] * K[i, t] * dai + y[j] * K[j, t] * daj)
            it += 1

        ub = INFINITY
        lb = -INFINITY
        sum_free = 0.0
        nr_free = 0
        for t in range(n):
            yG = y[t] * G[t]
            if alpha[t] >= C:
                if y[t] < 0:
                    ub = min(ub, yG)
                else:
                    lb = max(lb, yG)
            elif alpha[t] <= 0:
                if y[t] > 0:
                    ub = min(ub, yG)
                else:
                    lb = max(lb, yG)
            else:
                nr_free += 1
                sum_free += yG
    rho = sum_free / nr_free if nr_free > 0 else 0.5 * (ub + lb)
    return alpha_arr, rho, it, bool(converged)


# ---------------------------------------------------------------------------
# Collapsed Gibbs for a Dirichlet-process mixture with a conjugate
# Normal-Wishart prior (data centred on the prior mean). Cluster "slots" hold
# sufficient statistics (count, sum, sum of outer products) plus a cache of
# the Student-t predictive: location, Cholesky factor of the scale and the
# log normaliser.

cdef extern from "math.h" nogil:
    double lgamma(double)
    double log(double)
    double exp(double)

cdef double LOG_PI = 1.1447298858494002


cdef void _refresh_slot(Py_ssize_t k, const cnp.int64_t[::1] counts, const double[:, ::1] sums,
                        const double[:, :, ::1] outer, const double[:, ::1] psi0, double kappa0,
                        double nu0, double[:, ::1] mun, double[:, :, ::1] chol,
                        double[::1] cst, double[::1] dfp) noexcept nogil:
    cdef Py_ssize_t d = sums.shape[1], a, b, c
    cdef double n = <double>counts[k]
    cdef double kn = kappa0 + n
    cdef double df = nu0 + n - d + 1.0
    cdef double f = (kn + 1.0) / (kn * df)
    cdef double s, logdet = 0.0
    for a in range(d):
        mun[k, a] = sums[k, a] / kn
    # scale matrix, lower triangle, then in-place Cholesky
    for a in range(d):
        for b in range(a + 1):
            chol[k, a, b] = (psi0[a, b] + outer[k, a, b] - sums[k, a] * sums[k, b] / kn) * f
    for a in range(d):
        for b in range(a + 1):
            s = chol[k, a, b]
            for c in range(b):
                s -= chol[k, a, c] * chol[k, b, c]
            if a == b:
                if s <= 1e-300:
                    s = 1e-300
                chol[k, a, a] = sqrt(s)
            else:
                chol[k, a, b] = s / chol[k, b, b]
        for b in range(a + 1, d):
            chol[k, a, b] = 0.0
    for a in range(d):
        logdet += 2.0 * log(chol[k, a, a])
    dfp[k] = df
    cst[k] = lgamma(0.5 * (df + d)) - lgamma(0.5 * df) - 0.5 * d * (log(df) + LOG_PI) - 0.5 * logdet


cdef double _logpred(Py_ssize_t k, const double[:, ::1] X, Py_ssize_t i, const double[:, ::1] mun,
                     const double[:, :, ::1] chol, const double[::1] cst, const double[::1] dfp,
                     double* work) noexcept nogil:
    cdef Py_ssize_t d = X.shape[1], a, c
    cdef double s, q = 0.0
    for a in range(d):
        s = X[i, a] - mun[k, a]
        for c in range(a):
            s -= chol[k, a, c] * work[c]
        work[a] = s / chol[k, a, a]
        q += work[a] * work[a]
    return cst[k] - 0.5 * (dfp[k] + d) * log(1.0 + q / dfp[k])


cdef void _move(Py_ssize_t i, Py_ssize_t k, int sign, const double[:, ::1] X,
                cnp.int64_t[::1] counts, double[:, ::1] sums, double[:, :, ::1] outer) noexcept nogil:
    cdef Py_ssize_t d = X.shape[1], a, b
    counts[k] += sign
    for a in range(d):
        sums[k, a] += sign * X[i, a]
        for b in range(a + 1):
            outer[k, a, b] += sign * X[i, a] * X[i, b]


def dpm_refresh(const cnp.int64_t[::1] slots, const cnp.int64_t[::1] counts, const double[:, ::1] sums,
                const double[:, :, ::1] outer, const double[:, ::1] psi0, double kappa0, double nu0,
                double[:, ::1] mun, double[:, :, ::1] chol, double[::1] cst, double[::1] dfp):
    """Recompute the predictive cache of the given slots."""
    cdef Py_ssize_t j
    with nogil:
        for j in range(slots.shape[0]):
            _refresh_slot(slots[j], counts, sums, outer, psi0, kappa0, nu0, mun, chol, cst, dfp)


def dpm_pass(const double[:, ::1] X, cnp.int64_t[::1] z, const cnp.int64_t[::1] order,
             const double[::1] uniforms, cnp.int64_t[::1] counts, double[:, ::1] sums,
             double[:, :, ::1] outer, const double[:, ::1] psi0, double kappa0, double nu0,
             double[:, ::1] mun, double[:, :, ::1] chol, double[::1] cst, double[::1] dfp,
             double alpha, Py_ssize_t ka, Py_ssize_t kb, const cnp.int64_t[::1] forced):
    """One Gibbs pass over ``order``.

    With ``ka < 0`` every point may join any occupied slot or open a new one
    (the lowest empty slot; the last slot is reserved as the empty prior).
    Otherwise points choose between slots ``ka`` and ``kb`` only, and if
    ``forced`` is non-empty the pass follows it instead of sampling. Returns
    the summed log probability of the choices made (restricted mode only).
    """
    cdef Py_ssize_t n_slots = counts.shape[0], prior = n_slots - 1
    cdef Py_ssize_t d = X.shape[1], m = order.shape[0]
    cdef Py_ssize_t t, i, k, old, j, nc, hi = 0
    cdef double mx, tot, u, logq = 0.0, la, lb
    cdef bint restricted = ka >= 0, use_forced = forced.shape[0] > 0
    w_arr = np.empty(n_slots)
    c_arr = np.empty(n_slots, dtype=np.int64)
    work_arr = np.empty(d)
    cdef double[::1] w = w_arr
    cdef cnp.int64_t[::1] cand = c_arr
    cdef double[::1] work = work_arr
    with nogil:
        for k in range(prior):
            if counts[k] > 0:
                hi = k + 1
        for t in range(m):
            i = order[t]
            old = z[i]
            _move(i, old, -1, X, counts, sums, outer)
            _refresh_slot(old, counts, sums, outer, psi0, kappa0, nu0, mun, chol, cst, dfp)
            if restricted:
                la = log(<double>counts[ka]) + _logpred(ka, X, i, mun, chol, cst, dfp, &work[0])
                lb = log(<double>counts[kb]) + _logpred(kb, X, i, mun, chol, cst, dfp, &work[0])
                mx = la if la > lb else lb
                la = exp(la - mx)
                lb = exp(lb - mx)
                if use_forced:
                    k = forced[t]
                else:
                    k = ka if uniforms[t] * (la + lb) <= la else kb
                logq += log((la if k == ka else lb) / (la + lb))
            else:
                nc = 0
                mx = -INFINITY
                for k in range(hi):
                    if counts[k] > 0:
                        cand[nc] = k
                        w[nc] = log(<double>counts[k]) + _logpred(k, X, i, mun, chol, cst, dfp, &work[0])
                        if w[nc] > mx:
                            mx = w[nc]
                        nc += 1
                cand[nc] = prior
                w[nc] = log(alpha) + _logpred(prior, X, i, mun, chol, cst, dfp, &work[0])
                if w[nc] > mx:
                    mx = w[nc]
                nc += 1
                tot = 0.0
                for j in range(nc):
                    w[j] = exp(w[j] - mx)
                    tot += w[j]
                u = uniforms[t] * tot
                k = cand[nc - 1]
                for j in range(nc):
                    u -= w[j]
                    if u <= 0.0:
                        k = cand[j]
                        break
                if k == prior:
                    k = 0
                    while counts[k] > 0:
                        k += 1
            z[i] = k
            _move(i, k, 1, X, counts, sums, outer)
            _refresh_slot(k, counts, sums, outer, psi0, kappa0, nu0, mun, chol, cst, dfp)
            if k + 1 > hi:
                hi = k + 1
    return logq
