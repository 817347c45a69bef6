"""Compiled path kernels for the Monte Carlo module.

All kernels consume externally drawn normals and uniforms so that the random
stream is owned by numpy generators keyed per batch.
"""

import math

import numpy as np
from numba import njit

from ._kernels import hermite_eval

ZERO, CONST_LEFT, CONST_RIGHT, VALLEY_TRAP = 0, 1, 2, 3

OK, EXIT, NONFINITE = 0, 1, 2


@njit(cache=True, nogil=True)
def policy_drift(code, x, c, x_star):
    if code == CONST_LEFT:
        return -c
    if code == CONST_RIGHT:
        return c
    if code == VALLEY_TRAP:
        return -c if x - x_star >= 0.0 else c
    return 0.0


@njit(cache=True, nogil=True)
def _potential(x, n0, h, vals, ders):
    """Clamped cubic Hermite value at ``x``; the caller guarantees ``x`` is inside the grid."""
    t = x / h - n0
    i = int(t)
    if t < i:
        i -= 1
    if i > vals.shape[0] - 2:
        i = vals.shape[0] - 2
    s = t - i
    y0 = vals[i]
    m0 = ders[i] * h
    m1 = ders[i + 1] * h
    d = vals[i + 1] - y0
    v = y0 + s * (m0 + s * (3.0 * d - 2.0 * m0 - m1 + s * (m0 + m1 - 2.0 * d)))
    return min(max(v, 0.0), 1.0)


@njit(cache=True, nogil=True)
def _systematic_indices(logw, u, idx):
    """Systematic resampling driven by a single uniform ``u``; returns log mean weight."""
    n = logw.shape[0]
    m = logw.max()
    total = 0.0
    for i in range(n):
        total += math.exp(logw[i] - m)
    step = total / n
    target = u * step
    acc = math.exp(logw[0] - m)
    j = 0
    for i in range(n):
        while acc < target and j < n - 1:
            j += 1
            acc += math.exp(logw[j] - m)
        idx[i] = j
        target += step
    return m + math.log(total / n)


@njit(cache=True, nogil=True)
def _ess_fraction(logw):
    m = logw.max()
    s1 = 0.0
    s2 = 0.0
    for i in range(logw.shape[0]):
        e = math.exp(logw[i] - m)
        s1 += e
        s2 += e * e
    return s1 * s1 / (s2 * logw.shape[0])


@njit(cache=True, nogil=True)
def advance(state, z, u, dt, code, c, x_star, kappa, beta, theta,
            n0, h, vals, ders, lo, hi, delta, resample_below, out_diag):
    """Advance all paths through ``z.shape[0]`` Euler steps.

    ``state`` rows: position, Brownian part, int V, running log-weight,
    occupation of ``[x_star - delta, x_star + delta]``, int alpha dB.
    The running log-weight gains ``beta V dt + theta dX - kappa dB - kappa^2 dt / 2``.
    When ``resample_below > 0`` the particles are resampled (systematic, one
    uniform per step from ``u``) once the ESS fraction drops below it; the
    removed normalization is added to ``out_diag[0]``. ``out_diag[1]``
    tracks the minimum ESS fraction and ``out_diag[2]`` the resample count.
    """
    n_steps, n = z.shape
    sq = math.sqrt(dt)
    idx = np.empty(n, dtype=np.int64)
    tmp = np.empty(n)
    half_k2 = 0.5 * kappa * kappa * dt
    pos = state[0]
    brown = state[1]
    int_v = state[2]
    logw = state[3]
    occ = state[4]
    adb = state[5]
    for k in range(n_steps):
        for i in range(n):
            x = pos[i]
            a = policy_drift(code, x, c, x_star)
            db = sq * z[k, i]
            xn = x + (a + kappa) * dt + db
            if not (xn > lo and xn < hi):
                if math.isnan(xn):
                    return NONFINITE
                return EXIT
            v = _potential(0.5 * (x + xn), n0, h, vals, ders)
            pos[i] = xn
            brown[i] += db
            int_v[i] += v * dt
            logw[i] += beta * v * dt + theta * (xn - x) - kappa * db - half_k2
            if abs(xn - x_star) <= delta:
                occ[i] += dt
            adb[i] += a * db
        if resample_below > 0.0:
            ess = _ess_fraction(logw)
            if ess < out_diag[1]:
                out_diag[1] = ess
            if ess < resample_below:
                out_diag[0] += _systematic_indices(logw, u[k], idx)
                out_diag[2] += 1.0
                for r in range(state.shape[0]):
                    if r == 3:
                        continue
                    row = state[r]
                    for i in range(n):
                        tmp[i] = row[idx[i]]
                    for i in range(n):
                        row[i] = tmp[i]
                for i in range(n):
                    logw[i] = 0.0
    return OK


@njit(cache=True, nogil=True)
def confine_chunk(x, logw, z, u, dt, y, resample_below, out_diag):
    """BM killed on leaving ``(-y, y)``, with Brownian-bridge survival weights.

    Particles are resampled (systematic) when the ESS fraction falls below
    ``resample_below``; ``out_diag[0]`` accumulates the log of the removed
    mean weight, ``out_diag[1]`` the minimum ESS fraction. Returns ``False``
    if every particle is dead.
    """
    m, n = z.shape
    sq = math.sqrt(dt)
    idx = np.empty(n, dtype=np.int64)
    tmp = np.empty(n)
    for k in range(m):
        for i in range(n):
            if logw[i] == -np.inf:
                continue
            x0 = x[i]
            x1 = x0 + sq * z[k, i]
            x[i] = x1
            if x1 >= y or x1 <= -y:
                logw[i] = -np.inf
                continue
            p_hi = math.exp(-2.0 * (y - x0) * (y - x1) / dt)
            p_lo = math.exp(-2.0 * (y + x0) * (y + x1) / dt)
            surv = (1.0 - p_hi) * (1.0 - p_lo)
            logw[i] = logw[i] + math.log(surv) if surv > 0.0 else -np.inf
        if logw.max() == -np.inf:
            return False
        ess = _ess_fraction(logw)
        if ess < out_diag[1]:
            out_diag[1] = ess
        if ess < resample_below:
            out_diag[0] += _systematic_indices(logw, u[k], idx)
            for i in range(n):
                tmp[i] = x[idx[i]]
            for i in range(n):
                x[i] = tmp[i]
                logw[i] = 0.0
    return True


@njit(cache=True, nogil=True)
def reflected_chunk(r, ell, bq, z, dt, y, drift):
    """Doubly reflected walk on ``[0, y]`` by folding, with drift ``drift``.

    The local time at 0 is the one the fold itself generates (discrete
    Tanaka identity): a step ``a -> a + d`` with ``a + d < 0`` adds
    ``2 |a + d|``. ``bq`` accumulates the driving Brownian increments.
    """
    m, n = z.shape
    sq = math.sqrt(dt)
    for k in range(m):
        for i in range(n):
            db = sq * z[k, i]
            b = r[i] + drift * dt + db
            bq[i] += db
            if b < 0.0:
                ell[i] -= 2.0 * b
                b = -b
            if b > y:
                b = 2.0 * y - b
                if b < 0.0:
                    b = 0.0
            r[i] = b


@njit(cache=True, nogil=True)
def hitting_chunk(x, acc, tau, z, u, dt, k0, target, beta, lam, n0, h, vals, ders, lo, hi):
    """Advance unabsorbed paths towards ``target``; absorbed paths have ``tau >= 0``.

    ``acc`` accumulates ``int (beta V - lam) ds``; pass ``beta = 0`` for a
    plain Laplace transform. A Brownian-bridge test catches crossings between
    grid times and the hit is dated at the end of the step. Returns the
    number of paths still running, or ``-1`` on a window exit.
    """
    m, n = z.shape
    sq = math.sqrt(dt)
    running = 0
    for i in range(n):
        if tau[i] >= 0.0:
            continue
        xi = x[i]
        for k in range(m):
            xn = xi + sq * z[k, i]
            if not (xn > lo and xn < hi):
                return -1
            d0 = target - xi
            d1 = target - xn
            crossed = d0 * d1 <= 0.0
            if not crossed:
                crossed = u[k, i] < math.exp(-2.0 * d0 * d1 / dt)
            if beta != 0.0:
                acc[i] += beta * _potential(0.5 * (xi + xn), n0, h, vals, ders) * dt
            acc[i] -= lam * dt
            xi = xn
            if crossed:
                tau[i] = (k0 + k + 1) * dt
                break
        x[i] = xi
        if tau[i] < 0.0:
            running += 1
    return running
