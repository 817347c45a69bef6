"""Correctors, hitting-time functionals and the tilted free energy.

Everything here goes through the logarithmic derivative ``u = v'/v`` of the
hitting-time functional ``v(x; z) = E_x[exp(beta int_0^tau V - lam tau)]``,
which solves the Riccati equation ``u' = 2(lam - beta V) - u^2``. The branch
with ``u > 0`` (targets to the right) is attracting when integrating towards
increasing ``x``; the ``u < 0`` branch is attracting towards decreasing ``x``.
"""

import math
from dataclasses import dataclass, field as dc_field
from threading import Lock

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._kernels import hermite_eval_many, riccati_rk4
from ._validation import (
    BracketError,
    ConfigurationError,
    RiccatiBandError,
    WindowError,
    check_positive,
    check_sorted,
    check_theta,
    check_window,
)

DEFAULT_MAX_BUFFER = 40.0
DEFAULT_MIN_WINDOW = 200.0
RANDOM_KINDS = ("poisson-mollified", "wiener-mollified", "custom-samples")


@dataclass(frozen=True, eq=False)
class CorrectorProfile:
    """``u = theta + F'`` and ``F`` on the nodes ``x0 + k h`` of a window.

    ``F(origin) = 0``. ``band`` is the admissible interval for
    ``sign(theta) u`` and ``band_excess`` how far the solution leaves it
    (zero or negative when inside).
    """

    beta: float
    theta: float
    lam: float
    window: tuple
    grid_step: float
    x: np.ndarray
    u_values: np.ndarray
    F_values: np.ndarray
    relax_buffer: float
    mean_u: float
    origin: float = 0.0
    band: tuple = (0.0, math.inf)
    band_excess: float = 0.0
    ode_residual: float = 0.0

    def F(self, x):
        """Cubic Hermite interpolation of F (using ``F' = u - theta``)."""
        xs = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=float)).ravel())
        val = np.empty_like(xs)
        der = np.empty_like(xs)
        bad = hermite_eval_many(xs, self.x[0] / self.grid_step, self.grid_step,
                                self.F_values, self.u_values - self.theta, val, der)
        if bad:
            raise WindowError(f"{bad} points outside corrector window {self.window}")
        if np.ndim(x) == 0:
            return float(val[0])
        return val.reshape(np.shape(x))

    def gradient(self, x):
        """``u = theta + F'`` at arbitrary points."""
        xs = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=float)).ravel())
        val = np.empty_like(xs)
        der = np.empty_like(xs)
        hermite_eval_many(xs, self.x[0] / self.grid_step, self.grid_step,
                          self.F_values, self.u_values - self.theta, val, der)
        out = der + self.theta
        return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))

    def sublinearity(self, lengths=None):
        """``max_{|x - origin| <= L} |F| / L`` for a doubling sequence of L."""
        span = min(self.origin - self.window[0], self.window[1] - self.origin)
        if lengths is None:
            lengths = []
            length = span
            while length >= 4 * self.grid_step and len(lengths) < 8:
                lengths.append(length)
                length /= 2
            lengths = lengths[::-1]
        out = []
        for length in lengths:
            mask = np.abs(self.x - self.origin) <= length + 1e-12
            out.append((float(length), float(np.abs(self.F_values[mask]).max() / length)))
        return out


@dataclass
class FreeEnergyResult:
    """``Lambda_beta(theta)`` with the root ``lambda_o`` (None on the flat piece)."""

    beta: float
    theta: float
    Lambda: float
    lambda_o: float = None
    flat: bool = False
    bracket: tuple = (math.nan, math.nan)
    iterations: int = 0
    residual: float = 0.0
    monotone: bool = True
    window: tuple = None
    trace: list = dc_field(default_factory=list)
    tolerances: dict = dc_field(default_factory=dict)

    def to_dict(self):
        return {
            "beta": self.beta,
            "theta": self.theta,
            "Lambda": self.Lambda,
            "lambda_o": self.lambda_o,
            "flat": self.flat,
            "bracket": list(self.bracket),
            "iterations": self.iterations,
            "residual": self.residual,
            "monotone": self.monotone,
            "window": None if self.window is None else list(self.window),
            "trace": [list(t) for t in self.trace],
            "tolerances": dict(self.tolerances),
        }


def default_buffer(field, beta, lam, max_buffer=DEFAULT_MAX_BUFFER):
    gap = lam - beta * field.sup_level
    if gap <= 0:
        return max_buffer
    return min(20.0 / math.sqrt(2.0 * gap), max_buffer)


def _direction_arrays(field, start, direction, h, n_steps):
    """V at ``start + direction * k h / 2`` split into node and midpoint arrays."""
    pts = start + direction * 0.5 * h * np.arange(2 * n_steps + 1)
    lo, hi = min(pts[0], pts[-1]), max(pts[0], pts[-1])
    if not field.covers(lo, hi):
        raise WindowError(
            f"field window {field.window} does not cover [{lo}, {hi}] needed by the "
            "Riccati integration (window plus relaxation buffer)")
    vals, _ = field.evaluate(pts)
    return np.ascontiguousarray(vals[0::2]), np.ascontiguousarray(vals[1::2])


class _RiccatiLattice:
    """Precomputed potential samples for repeated solves on one lattice.

    The retained nodes are ``lo + k h``, ``k = 0..n``. For ``sign = +1`` the
    integration starts ``n_buf`` steps left of ``lo``; for ``sign = -1`` it
    starts ``n_buf`` steps right of ``hi`` and runs leftwards.
    """

    def __init__(self, field, window, sign, h, relax_buffer):
        lo, hi = window
        self.n = max(1, round((hi - lo) / h))
        self.h = (hi - lo) / self.n
        self.lo, self.hi = lo, hi
        self.sign = 1 if sign > 0 else -1
        self.n_buf = int(math.ceil(relax_buffer / self.h - 1e-9))
        self.relax_buffer = self.n_buf * self.h
        if self.sign > 0:
            start = lo - self.n_buf * self.h
        else:
            start = hi + self.n_buf * self.h
        self.v_nodes, self.v_mid = _direction_arrays(field, start, self.sign, self.h,
                                                     self.n + self.n_buf)
        self.x = lo + self.h * np.arange(self.n + 1)
        self.sup_level = field.sup_level

    def solve(self, beta, lam):
        """Return ``u`` (signed) and ``W = int_lo^x u`` on the retained nodes."""
        u0 = math.sqrt(max(2.0 * (lam - beta * self.v_nodes[0]), 0.0))
        ut, wt = riccati_rk4(self.v_nodes, self.v_mid, beta, lam, self.h, u0)
        ut = ut[self.n_buf:]
        wt = wt[self.n_buf:] - wt[self.n_buf]
        if self.sign > 0:
            return ut, wt
        # reversed lattice: u = -ut, and W(x) - W(lo) = wt(x) - wt(lo) read ascending
        u = -ut[::-1]
        w = wt[::-1]
        return u, w - w[0]

    def mean_u(self, beta, lam):
        u, w = self.solve(beta, lam)
        if not np.isfinite(w[-1]):
            return math.nan
        return w[-1] / (self.hi - self.lo)


def _band(beta, lam, sup_level):
    return math.sqrt(max(2.0 * (lam - beta * sup_level), 0.0)), math.sqrt(max(2.0 * lam, 0.0))


def _check_lambda(field, beta, lam):
    if lam < beta * field.sup_level - 1e-15:
        raise ConfigurationError(
            f"lambda={lam} is below beta * sup V = {beta * field.sup_level}")


def _snap_window(field, window, h):
    lo, hi = check_window(window)
    n = max(1, round((hi - lo) / h))
    return lo, lo + n * h


def solve_riccati(field, beta, theta, lam, window, relax_buffer=None, grid_step=None,
                  origin=0.0, tol_u=1e-6, max_buffer=DEFAULT_MAX_BUFFER):
    """Corrector profile ``u = theta + (F^lam_{beta,theta})'`` on ``window``.

    ``theta`` fixes the branch through its sign and enters ``F`` through
    ``F(x) = int_origin^x u - theta (x - origin)``. The integration runs in
    the stable direction from outside the window (``relax_buffer`` away) and
    the buffer is discarded.

    Raises
    ------
    RiccatiBandError
        if ``sign(theta) u`` leaves the band ``[sqrt(2(lam - beta)), sqrt(2 lam)]``
        by more than ``tol_u``.
    """
    beta = check_positive(beta, "beta")
    if theta == 0:
        raise ConfigurationError("theta must be nonzero for a corrector")
    _check_lambda(field, beta, lam)
    h = field.grid_step if grid_step is None else check_positive(grid_step, "grid_step")
    lo, hi = _snap_window(field, window, h)
    if not lo - 1e-9 <= origin <= hi + 1e-9:
        raise ConfigurationError("origin must lie inside the window")
    if relax_buffer is None:
        relax_buffer = default_buffer(field, beta, lam, max_buffer)
    lattice = _RiccatiLattice(field, (lo, hi), np.sign(theta), h, relax_buffer)
    u, w = lattice.solve(beta, lam)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(w))):
        raise RiccatiBandError("Riccati solution blew up (lambda below admissible range?)")
    band_lo, band_hi = _band(beta, lam, field.sup_level)
    su = np.sign(theta) * u
    excess = float(max((band_lo - su).max(), (su - band_hi).max()))
    if excess > tol_u:
        raise RiccatiBandError(
            f"corrector gradient leaves the band [{band_lo:.6g}, {band_hi:.6g}] by "
            f"{excess:.3g} > tol_u={tol_u:g}; lengthen the buffer or refine the grid")
    x = lattice.x
    # W at the origin by Hermite interpolation of (W, u)
    wo = np.empty(1)
    wd = np.empty(1)
    hermite_eval_many(np.array([float(origin)]), x[0] / lattice.h, lattice.h, w, u, wo, wd)
    F = (w - wo[0]) - theta * (x - origin)
    v_nodes = lattice.v_nodes[lattice.n_buf:]
    if lattice.sign < 0:
        v_nodes = v_nodes[::-1]
    resid = 0.0
    if u.size > 2:
        du = (u[2:] - u[:-2]) / (2.0 * lattice.h)
        resid = float(np.abs(0.5 * du + 0.5 * u[1:-1] ** 2 + beta * v_nodes[1:-1] - lam).max())
    return CorrectorProfile(
        beta=beta, theta=float(theta), lam=float(lam), window=(lo, hi), grid_step=lattice.h,
        x=x, u_values=u, F_values=F, relax_buffer=lattice.relax_buffer,
        mean_u=float(w[-1] / (hi - lo)), origin=float(origin), band=(band_lo, band_hi),
        band_excess=excess, ode_residual=resid)


def neg_log_v(field, beta, lam, x, y, relax_buffer=None, grid_step=None,
              max_buffer=DEFAULT_MAX_BUFFER):
    """``-log v^lam_beta(x; y)`` as the integral of ``|u|`` from ``x`` to ``y``.

    The lattice is anchored at ``x`` and ``y`` with step close to
    ``grid_step``; the buffer extends beyond ``x`` on the side away from ``y``.
    """
    beta = check_positive(beta, "beta")
    _check_lambda(field, beta, lam)
    if x == y:
        return 0.0
    h0 = field.grid_step if grid_step is None else grid_step
    if relax_buffer is None:
        relax_buffer = default_buffer(field, beta, lam, max_buffer)
    lo, hi = min(x, y), max(x, y)
    n = max(1, int(math.ceil((hi - lo) / h0 - 1e-9)))
    h = (hi - lo) / n
    direction = 1.0 if y > x else -1.0
    # the buffer runs at the native step so short segments stay cheap
    n_buf = max(1, int(math.ceil(relax_buffer / h0 - 1e-9)))
    h_buf = relax_buffer / n_buf
    b_nodes, b_mid = _direction_arrays(field, x - direction * relax_buffer, direction,
                                       h_buf, n_buf)
    u_buf, _ = riccati_rk4(b_nodes, b_mid, beta, lam, h_buf,
                           math.sqrt(max(2.0 * (lam - beta * b_nodes[0]), 0.0)))
    v_nodes, v_mid = _direction_arrays(field, x, direction, h, n)
    u, w = riccati_rk4(v_nodes, v_mid, beta, lam, h, float(u_buf[-1]))
    val = w[-1] - w[0]
    if not math.isfinite(val):
        raise RiccatiBandError("Riccati solution blew up")
    return float(val)


def _default_window(field, max_buffer):
    lo, hi = field.window
    return lo + max_buffer, hi - max_buffer


def find_lambda_o(field, beta, theta, window=None, tol_root=1e-8, eps_lambda=None,
                  max_buffer=DEFAULT_MAX_BUFFER, min_window=DEFAULT_MIN_WINDOW,
                  grid_step=None, bracket_margin=1e-3):
    """Solve ``mean_u(lam) = theta`` for ``lam`` by bisection.

    The spatial mean of ``u`` over the window stands in for the ergodic mean
    of ``F(., 1) + theta``. If ``mean_u`` already exceeds ``theta`` just
    above the floor ``beta sup V`` the slope lies in the flat piece.
    """
    beta = check_positive(beta, "beta")
    theta = float(theta)
    if theta == 0.0:
        raise ConfigurationError("find_lambda_o needs theta != 0")
    window = _default_window(field, max_buffer) if window is None else check_window(window)
    if field.kind in RANDOM_KINDS and window[1] - window[0] < min_window:
        raise ConfigurationError(
            f"window length {window[1] - window[0]:g} is below min_window={min_window:g}")
    eps_lambda = 1e-6 * beta if eps_lambda is None else eps_lambda
    h = field.grid_step if grid_step is None else grid_step
    floor = beta * field.sup_level
    lam_lo = floor + eps_lambda
    lattice = _RiccatiLattice(field, _snap_window(field, window, h), np.sign(theta), h,
                              default_buffer(field, beta, lam_lo, max_buffer))
    target = abs(theta)
    sign = lattice.sign

    def m(lam):
        return sign * lattice.mean_u(beta, lam) - target

    tolerances = {"tol_root": tol_root, "eps_lambda": eps_lambda,
                  "relax_buffer": lattice.relax_buffer, "grid_step": lattice.h}
    trace = []
    m_lo = m(lam_lo)
    trace.append((lam_lo, m_lo))
    common = dict(beta=beta, theta=theta, window=(lattice.lo, lattice.hi), tolerances=tolerances)
    if m_lo >= 0:
        return FreeEnergyResult(Lambda=floor, lambda_o=None, flat=True,
                                bracket=(lam_lo, lam_lo), residual=m_lo, trace=trace, **common)
    lam_hi = floor + 0.5 * theta * theta + bracket_margin
    m_hi = m(lam_hi)
    trace.append((lam_hi, m_hi))
    if not m_hi > 0:
        raise BracketError(
            f"mean_u does not reach theta={theta} at lambda={lam_hi}; window too short?")
    lo, hi = lam_lo, lam_hi
    iterations = 0
    while hi - lo > tol_root:
        mid = 0.5 * (lo + hi)
        mm = m(mid)
        trace.append((mid, mm))
        iterations += 1
        if mm > 0:
            hi = mid
        elif mm < 0:
            lo = mid
        else:
            lo = hi = mid
    trace_sorted = sorted(trace)
    ms = [t[1] for t in trace_sorted]
    monotone = all(b >= a - 1e-12 for a, b in zip(ms, ms[1:]))
    root = 0.5 * (lo + hi)
    if lo <= lam_lo:
        # the search never left the bracket floor: classify as flat
        return FreeEnergyResult(Lambda=floor, lambda_o=None, flat=True, bracket=(lo, hi),
                                iterations=iterations, residual=m(root), monotone=monotone,
                                trace=trace, **common)
    return FreeEnergyResult(Lambda=root, lambda_o=root, flat=False, bracket=(lo, hi),
                            iterations=iterations, residual=m(root), monotone=monotone,
                            trace=trace, **common)


def tilted_free_energy(field, beta, theta, window=None, **kwargs):
    """``Lambda_beta(theta)``; computed from ``|theta|`` so it is exactly even."""
    beta = check_positive(beta, "beta")
    theta = float(theta)
    if theta == 0.0:
        floor = beta * field.sup_level
        return FreeEnergyResult(beta=beta, theta=0.0, Lambda=floor, flat=True,
                                bracket=(floor, floor), window=window)
    res = find_lambda_o(field, beta, abs(theta), window=window, **kwargs)
    res.theta = theta
    return res


def flat_interval(results):
    """Maximal symmetric interval of flat results around 0, as ``(-t, t)``; None if 0 is not flat."""
    by_abs = sorted(results, key=lambda r: abs(r.theta))
    t_f = None
    for r in by_abs:
        if not r.flat:
            break
        t_f = abs(r.theta)
    return None if t_f is None else (-t_f, t_f)


def free_energy_curve(field, beta, theta_grid, window=None, n_jobs=1, **kwargs):
    """Per-theta free energies on a sorted grid plus the detected flat interval."""
    grid = check_sorted(theta_grid)
    uniq = sorted(set(abs(float(t)) for t in grid))

    def run(t):
        return tilted_free_energy(field, beta, t, window=window, **kwargs)

    if n_jobs == 1:
        base = {t: run(t) for t in uniq}
    else:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            base = dict(zip(uniq, ex.map(run, uniq)))
    out = []
    for t in grid:
        r = base[abs(float(t))]
        out.append(FreeEnergyResult(**{**r.__dict__, "theta": float(t)}))
    return out, flat_interval(out)


def corrector_at_root(field, result, window, origin=0.0, **kwargs):
    """Corrector profile at ``lambda_o`` for a non-flat free-energy result."""
    if result.flat or result.lambda_o is None:
        raise ConfigurationError("no corrector on the flat piece")
    return solve_riccati(field, result.beta, result.theta, result.lambda_o, window,
                         origin=origin, **kwargs)


def martingale_weights(profile, times, positions, beta, theta, field):
    """``M_t = exp(beta int V(X) + theta X_t + F(X_t) - lam t)`` for one discretized path.

    ``int V`` uses the trapezoid rule along the path and ``F`` is interpolated
    from the profile. Returns ``M`` at the final time.
    """
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    if times.shape != positions.shape or times.ndim != 1:
        raise ConfigurationError("times and positions must be 1-d arrays of equal length")
    lo, hi = profile.window
    if positions.min() < lo or positions.max() > hi:
        raise WindowError("path leaves the corrector window")
    v, _ = field.evaluate(positions)
    integral = float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(times))) if times.size > 1 else 0.0
    xt = positions[-1]
    t = times[-1] - times[0]
    return math.exp(beta * integral + theta * (xt - positions[0]) + profile.F(xt)
                    - profile.F(positions[0]) - profile.lam * t)


class TiltedFreeEnergy(BaseEstimator):
    """Estimator wrapper: ``fit`` binds an environment, ``predict`` returns Lambda.

    Parameters
    ----------
    beta : float
        Magnitude of the potential.
    window : tuple or None
        Averaging window; default is the field window minus ``max_buffer`` at
        both ends.
    tol_root, eps_lambda, max_buffer, min_window : float
        Solver tolerances, see :func:`find_lambda_o`.
    """

    def __init__(self, beta=1.0, window=None, tol_root=1e-8, eps_lambda=None,
                 max_buffer=DEFAULT_MAX_BUFFER, min_window=DEFAULT_MIN_WINDOW):
        self.beta = beta
        self.window = window
        self.tol_root = tol_root
        self.eps_lambda = eps_lambda
        self.max_buffer = max_buffer
        self.min_window = min_window

    def _solver_kwargs(self):
        return {"tol_root": self.tol_root, "eps_lambda": self.eps_lambda,
                "max_buffer": self.max_buffer, "min_window": self.min_window}

    def fit(self, field, y=None):
        check_positive(self.beta, "beta")
        self.field_ = field
        self.cache_ = {}
        self._lock = Lock()
        self.floor_ = self.beta * field.sup_level
        return self

    def result(self, theta):
        check_is_fitted(self, "field_")
        key = abs(float(theta))
        with self._lock:
            hit = self.cache_.get(key)
        if hit is None:
            hit = tilted_free_energy(self.field_, self.beta, key, window=self.window,
                                     **self._solver_kwargs())
            with self._lock:
                self.cache_.setdefault(key, hit)
        return hit

    def predict(self, theta):
        thetas = check_theta(theta)
        return np.array([self.result(t).Lambda for t in thetas])

    def flat_piece(self, theta_grid):
        grid = check_sorted(theta_grid)
        return flat_interval([FreeEnergyResult(**{**self.result(t).__dict__, "theta": float(t)})
                              for t in grid])
