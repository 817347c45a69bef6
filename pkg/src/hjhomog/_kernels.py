"""Compiled inner loops: cubic Hermite lookups and the Riccati integrator.

Grids are uniform and described by ``(n0, h)``: node ``i`` sits at
``(n0 + i) * h``.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def hermite_eval(x, n0, h, vals, ders):
    """Value and derivative of the C1 cubic Hermite interpolant at ``x``.

    Returns ``(nan, nan)`` outside the grid so callers can raise.
    """
    n = vals.shape[0]
    t = x / h - n0
    if t < -1e-9 or t > n - 1 + 1e-9:
        return math.nan, math.nan
    i = int(math.floor(t + 0.5))
    if abs(t - i) < 1e-9:
        return vals[i], ders[i]
    i = int(math.floor(t))
    if i >= n - 1:
        i = n - 2
    s = t - i
    s2 = s * s
    s3 = s2 * s
    y0 = vals[i]
    y1 = vals[i + 1]
    m0 = ders[i] * h
    m1 = ders[i + 1] * h
    val = ((2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * m0
           + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * m1)
    der = ((6.0 * s2 - 6.0 * s) * y0 + (3.0 * s2 - 4.0 * s + 1.0) * m0
           + (-6.0 * s2 + 6.0 * s) * y1 + (3.0 * s2 - 2.0 * s) * m1) / h
    return val, der


@njit(cache=True, nogil=True)
def hermite_eval_many(xs, n0, h, vals, ders, out_val, out_der):
    bad = 0
    for k in range(xs.shape[0]):
        v, d = hermite_eval(xs[k], n0, h, vals, ders)
        if math.isnan(v):
            bad += 1
        out_val[k] = v
        out_der[k] = d
    return bad


@njit(cache=True, nogil=True)
def riccati_rk4(v_nodes, v_mid, beta, lam, h, u0):
    """Integrate ``u' = 2(lam - beta V) - u^2`` and ``w' = u`` forward.

    ``v_nodes[k]`` is V at step ``k`` and ``v_mid[k]`` at the half step after
    it. Returns the arrays ``u`` and ``w`` (with ``w[0] = 0``).
    """
    n = v_mid.shape[0]
    u = np.empty(n + 1)
    w = np.empty(n + 1)
    u[0] = u0
    w[0] = 0.0
    uk = u0
    wk = 0.0
    for k in range(n):
        a0 = 2.0 * (lam - beta * v_nodes[k])
        am = 2.0 * (lam - beta * v_mid[k])
        a1 = 2.0 * (lam - beta * v_nodes[k + 1])
        k1 = a0 - uk * uk
        ua = uk + 0.5 * h * k1
        k2 = am - ua * ua
        ub = uk + 0.5 * h * k2
        k3 = am - ub * ub
        uc = uk + h * k3
        k4 = a1 - uc * uc
        wk = wk + h * (uk + 2.0 * ua + 2.0 * ub + uc) / 6.0
        uk = uk + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        u[k + 1] = uk
        w[k + 1] = wk
    return u, w
