"""Pure Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""
import math

import numpy as np
from scipy.linalg import solve_triangular

MAX_DEPTH = 48


def _speed(c, k, u):
    d = (3.0 * c[0, k] * u + 2.0 * c[1, k]) * u + c[2, k]
    return math.sqrt(float(d @ d))


def _asr(c, k, a, b, fa, fm, fb, whole, eps, depth):
    m = 0.5 * (a + b)
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = _speed(c, k, lm)
    frm = _speed(c, k, rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15.0 * eps:
        return left + right + delta / 15.0
    return (_asr(c, k, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
            + _asr(c, k, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1))


def arc_length_pieces(c, piece, a, b, tol):
    out = np.zeros(len(piece))
    for i in range(len(piece)):
        if b[i] <= a[i]:
            continue
        k = piece[i]
        m = 0.5 * (a[i] + b[i])
        fa, fm, fb = _speed(c, k, a[i]), _speed(c, k, m), _speed(c, k, b[i])
        whole = (b[i] - a[i]) / 6.0 * (fa + 4.0 * fm + fb)
        out[i] = _asr(c, k, a[i], b[i], fa, fm, fb, whole, tol, MAX_DEPTH)
    return out


def nearest(pts, ref, chunk=2048):
    pts = np.asarray(pts, dtype=float)
    ref = np.asarray(ref, dtype=float)
    dist = np.empty(len(pts))
    idx = np.empty(len(pts), dtype=np.int64)
    for s in range(0, len(pts), chunk):
        block = pts[s:s + chunk]
        d2 = ((block[:, None, :] - ref[None, :, :]) ** 2).sum(-1)
        j = np.argmin(d2, axis=1)
        idx[s:s + chunk] = j
        dist[s:s + chunk] = np.sqrt(d2[np.arange(len(block)), j])
    return dist, idx


def smo_solve(K, y, C, eps, max_iter):
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    TAU = 1e-12
    alpha = np.zeros(n)
    G = -np.ones(n)
    diag = np.diag(K).copy()
    pos = y > 0
    it = 0
    converged = False
    while it < max_iter:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        score = -y * G
        if not up.any():
            converged = True
            break
        cand = np.where(up, score, -np.inf)
        # last index attaining the max, matching the ">=" scan of the kernel
        i = n - 1 - int(np.argmax(cand[::-1]))
        gmax = cand[i]
        gmax2 = np.max(np.where(low, -score, -np.inf)) if low.any() else -np.inf
        grad_diff = gmax + y * G
        ok = low & (grad_diff > 0)
        if gmax + gmax2 < eps or not ok.any():
            converged = True
            break
        quad = diag[i] + diag - 2.0 * K[i]
        quad = np.where(quad <= 0, TAU, quad)
        obj = np.where(ok, -(grad_diff ** 2) / quad, np.inf)
        j = n - 1 - int(np.argmin(obj[::-1]))
        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            q = K[i, i] + K[j, j] + 2.0 * (y[i] * y[j] * K[i, j])
            q = TAU if q <= 0 else q
            delta = (-G[i] - G[j]) / q
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            q = K[i, i] + K[j, j] - 2.0 * (y[i] * y[j] * K[i, j])
            q = TAU if q <= 0 else q
            delta = (G[i] - G[j]) / q
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, s - C
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, s
            if s > C:
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, s - C
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, s
        dai, daj = alpha[i] - old_i, alpha[j] - old_j
        G += y * (y[i] * K[i] * dai + y[j] * K[j] * daj)
        it += 1

    yG = y * G
    at_ub = alpha >= C
    at_lb = alpha <= 0
    free = ~(at_ub | at_lb)
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub_set = (at_ub & ~pos) | (at_lb & pos)
        lb_set = (at_ub & pos) | (at_lb & ~pos)
        ub = yG[ub_set].min() if ub_set.any() else np.inf
        lb = yG[lb_set].max() if lb_set.any() else -np.inf
        rho = 0.5 * (ub + lb)
    return alpha, rho, it, converged


# Dirichlet-process mixture Gibbs pass --------------------------------------

_LOG_PI = math.log(math.pi)


def _refresh_slot(k, counts, sums, outer, psi0, kappa0, nu0, mun, chol, cst, dfp):
    d = sums.shape[1]
    n = float(counts[k])
    kn = kappa0 + n
    df = nu0 + n - d + 1.0
    low = np.tril(outer[k])
    full = low + np.tril(low, -1).T
    scale = (psi0 + full - np.outer(sums[k], sums[k]) / kn) * ((kn + 1.0) / (kn * df))
    mun[k] = sums[k] / kn
    try:
        L = np.linalg.cholesky(scale)
    except np.linalg.LinAlgError:
        L = np.linalg.cholesky(scale + 1e-12 * np.eye(d))
    chol[k] = L
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    dfp[k] = df
    cst[k] = (math.lgamma(0.5 * (df + d)) - math.lgamma(0.5 * df)
              - 0.5 * d * (math.log(df) + _LOG_PI) - 0.5 * logdet)


def _logpred(k, x, mun, chol, cst, dfp):
    w = solve_triangular(chol[k], x - mun[k], lower=True)
    return cst[k] - 0.5 * (dfp[k] + len(x)) * math.log(1.0 + float(w @ w) / dfp[k])


def _move(i, k, sign, X, counts, sums, outer):
    counts[k] += sign
    sums[k] += sign * X[i]
    outer[k] += sign * np.tril(np.outer(X[i], X[i]))


def dpm_refresh(slots, counts, sums, outer, psi0, kappa0, nu0, mun, chol, cst, dfp):
    for k in slots:
        _refresh_slot(int(k), counts, sums, outer, psi0, kappa0, nu0, mun, chol, cst, dfp)


def dpm_pass(X, z, order, uniforms, counts, sums, outer, psi0, kappa0, nu0, mun, chol, cst, dfp,
             alpha, ka, kb, forced):
    n_slots = len(counts)
    prior = n_slots - 1
    args = (counts, sums, outer, psi0, kappa0, nu0, mun, chol, cst, dfp)
    active = np.flatnonzero(counts[:prior] > 0)
    hi = int(active[-1]) + 1 if len(active) else 0
    restricted = ka >= 0
    logq = 0.0
    for t, i in enumerate(order):
        old = int(z[i])
        _move(i, old, -1, X, counts, sums, outer)
        _refresh_slot(old, *args)
        if restricted:
            la = math.log(counts[ka]) + _logpred(ka, X[i], mun, chol, cst, dfp)
            lb = math.log(counts[kb]) + _logpred(kb, X[i], mun, chol, cst, dfp)
            mx = max(la, lb)
            la, lb = math.exp(la - mx), math.exp(lb - mx)
            if len(forced):
                k = int(forced[t])
            else:
                k = ka if uniforms[t] * (la + lb) <= la else kb
            logq += math.log((la if k == ka else lb) / (la + lb))
        else:
            cand = [k for k in range(hi) if counts[k] > 0] + [prior]
            w = np.array([(math.log(alpha) if k == prior else math.log(counts[k]))
                          + _logpred(k, X[i], mun, chol, cst, dfp) for k in cand])
            w = np.exp(w - w.max())
            u = uniforms[t] * w.sum()
            k = cand[-1]
            for j, wj in enumerate(w):
                u -= wj
                if u <= 0.0:
                    k = cand[j]
                    break
            if k == prior:
                k = int(np.argmax(counts == 0))
        z[i] = k
        _move(i, k, 1, X, counts, sums, outer)
        _refresh_slot(k, *args)
        hi = max(hi, k + 1)
    return logq
