"""Finite differences for the viscous problem and its effective limit.

The viscous problem is

    u_t = (eps/2) u_xx + H(u_x) + beta V(x/eps),   H(p) = p^2/2 - c|p|,

stepped explicitly with a local Lax-Friedrichs flux. The artificial
dissipation is only what the physical viscosity does not already provide:
with ``p_-``, ``p_+`` the one-sided slopes the update reads

    u_j += dt [ H((p_- + p_+)/2) + (eps/dx + s_j)(p_+ - p_-)/2 + beta V_j ]

and ``s_j = max(0, max(|p_-|, |p_+|) + c - eps/dx)``, which makes the
scheme monotone as soon as ``dt <= dx^2 / (eps + s dx)``.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
from numba import njit
from scipy.linalg import solve_banded

from ._validation import ConfigurationError, SchemeError, WindowError, check_positive


@dataclass
class PdeSolveResult:
    """Solution snapshots, the probe ``u(T, 0)`` and scheme diagnostics."""

    epsilon: float
    initial: str
    theta: float
    domain: tuple
    dx: float
    dt: float
    T: float
    x: np.ndarray
    snapshots: dict
    probe: float
    probe_trace: list
    cfl_ratio: float
    max_gradient: float
    steps: int
    sigma_bound: float
    diagnostics: dict = dc_field(default_factory=dict)

    @property
    def u_final(self):
        return self.snapshots[max(self.snapshots)]

    def to_dict(self, with_arrays=False):
        out = {k: v for k, v in self.__dict__.items() if k not in ("x", "snapshots")}
        out["domain"] = list(self.domain)
        if with_arrays:
            out["x"] = self.x.tolist()
            out["snapshots"] = {repr(t): u.tolist() for t, u in self.snapshots.items()}
        return out

    def write_snapshot(self, path, time=None):
        """Columnar text ``x u`` for one snapshot."""
        t = max(self.snapshots) if time is None else time
        np.savetxt(path, np.column_stack([self.x, self.snapshots[t]]), header="x u",
                   comments="", fmt="%.17g")


@njit(cache=True, nogil=True)
def _viscous_steps(u, n_steps, dt, dx, eps, c, src, left_mode, right_mode, theta,
                   p_bound, sigma_cap, out):
    """Explicit LLF steps in place. ``out`` = [max cfl ratio, max |p|, status]."""
    n = u.shape[0]
    new = np.empty(n)
    inv = 1.0 / dx
    ed = eps / dx
    for _ in range(n_steps):
        for j in range(n):
            uj = u[j]
            if j == 0:
                ul = uj - theta * dx if left_mode == 0 else 2.0 * uj - u[1]
            else:
                ul = u[j - 1]
            if j == n - 1:
                ur = uj + theta * dx if right_mode == 0 else 2.0 * uj - u[n - 2]
            else:
                ur = u[j + 1]
            pm = (uj - ul) * inv
            pp = (ur - uj) * inv
            amax = max(abs(pm), abs(pp))
            if amax > out[1]:
                out[1] = amax
            if amax > p_bound:
                out[2] = 2.0
                return
            s = amax + c - ed
            if s < 0.0:
                s = 0.0
            if s > sigma_cap:
                out[2] = 1.0
                return
            ratio = dt * (eps + s * dx) * inv * inv
            if ratio > out[0]:
                out[0] = ratio
            pbar = 0.5 * (pm + pp)
            ham = 0.5 * pbar * pbar - c * abs(pbar)
            new[j] = uj + dt * (ham + 0.5 * (ed + s) * (pp - pm) + src[j])
        for j in range(n):
            u[j] = new[j]


@njit(cache=True, nogil=True)
def _effective_steps(u, n_steps, dt, dx, p_tab, h_tab, sigma, left_mode, right_mode, theta,
                     p_bound, out):
    """Global Lax-Friedrichs steps for ``u_t = Hbar(u_x)`` with tabulated ``Hbar``."""
    n = u.shape[0]
    new = np.empty(n)
    inv = 1.0 / dx
    p0 = p_tab[0]
    hp = p_tab[1] - p_tab[0]
    m = p_tab.shape[0]
    for _ in range(n_steps):
        for j in range(n):
            uj = u[j]
            if j == 0:
                ul = uj - theta * dx if left_mode == 0 else 2.0 * uj - u[1]
            else:
                ul = u[j - 1]
            if j == n - 1:
                ur = uj + theta * dx if right_mode == 0 else 2.0 * uj - u[n - 2]
            else:
                ur = u[j + 1]
            pm = (uj - ul) * inv
            pp = (ur - uj) * inv
            pbar = 0.5 * (pm + pp)
            a = max(abs(pm), abs(pp))
            if a > out[1]:
                out[1] = a
            if a > p_bound:
                out[2] = 2.0
                return
            t = (pbar - p0) / hp
            k = int(math.floor(t))
            if k < 0 or k > m - 2:
                out[2] = 3.0
                return
            w = t - k
            ham = (1.0 - w) * h_tab[k] + w * h_tab[k + 1]
            new[j] = uj + dt * (ham + 0.5 * sigma * (pp - pm))
        for j in range(n):
            u[j] = new[j]


def _grid(R_run, dx):
    n_half = int(math.ceil(R_run / dx - 1e-9))
    x = dx * np.arange(-n_half, n_half + 1)
    return x, n_half


def run_radius(R, T, theta, c, beta, margin=1.0):
    """Half-width outside whose boundary cannot influence ``[-R, R]`` up to time ``T``."""
    speed = abs(theta) + c + math.sqrt(2.0 * (beta + 0.5 * theta * theta))
    return R + T * speed + margin


def _initial(initial, x):
    """Return (u0, tag, theta, linear?) for a slope or a callable."""
    if callable(initial):
        u0 = np.asarray(initial(x), dtype=float)
        if u0.shape != x.shape or not np.all(np.isfinite(u0)):
            raise ConfigurationError("initial data must map the grid to finite values")
        slope = float(np.max(np.abs(np.diff(u0))) / (x[1] - x[0]))
        return u0, getattr(initial, "tag", getattr(initial, "__name__", "callable")), slope, False
    theta = float(initial)
    return theta * x, f"linear:{theta!r}", theta, True


def _record_steps(T, dt_max, record_times):
    n_steps = int(math.ceil(T / dt_max - 1e-12))
    dt = T / n_steps
    times = sorted(set(float(t) for t in (record_times or [])) | {float(T)})
    stops = []
    for t in times:
        if not 0 < t <= T + 1e-12:
            raise ConfigurationError("record times must lie in (0, T]")
        stops.append(int(round(t / dt)))
    return dt, n_steps, times, stops


def solve_viscous(field, beta, c, epsilon, initial, R=1.0, T=1.0, dx=None, dt=None,
                  record_times=None, cfl=0.9, p_bound=None, margin=1.0):
    """Explicit solve of the viscous problem; probe ``u(T, 0)``.

    Parameters
    ----------
    initial : float or callable
        A slope ``theta`` (linear data ``theta x``, affine ghost cells) or a
        function of ``x`` (ghost cells by linear extrapolation).
    R : float
        Half-width of the probe box; the computational domain is enlarged so
        its boundary cannot reach the box before ``T``.
    dx : float
        Default ``epsilon / 8``.
    dt : float
        Default ``cfl * dx^2 / (eps + s_max dx)`` where ``s_max`` follows from
        the a-priori slope bound ``|theta| + c + sqrt(2(beta + theta^2/2))``.
    """
    beta = check_positive(beta, "beta", allow_zero=True)
    c = check_positive(c, "c", allow_zero=True)
    eps = check_positive(epsilon, "epsilon")
    dx = eps / 8.0 if dx is None else check_positive(dx, "dx")
    probe_theta = float(initial) if not callable(initial) else 0.0
    # slope for the domain estimate; callables are measured on a provisional grid
    if callable(initial):
        xs = np.linspace(-R - 10, R + 10, 2001)
        slope = float(np.max(np.abs(np.diff(initial(xs)))) / (xs[1] - xs[0]))
    else:
        slope = abs(probe_theta)
    R_run = run_radius(R, T, slope, c, beta, margin)
    x, n_half = _grid(R_run, dx)
    u, tag, theta, linear = _initial(initial, x)
    lo, hi = x[0] / eps, x[-1] / eps
    if not field.covers(lo, hi):
        raise WindowError(f"field window {field.window} must cover [{lo:.1f}, {hi:.1f}] "
                          f"(domain [{x[0]:.2f}, {x[-1]:.2f}] at epsilon={eps:g})")
    src = beta * field.evaluate(x / eps)[0]
    p_max = slope + c + math.sqrt(2.0 * (beta + 0.5 * slope * slope))
    s_max = max(0.0, p_max + c - eps / dx)
    dt_cfl = dx * dx / (eps + s_max * dx)
    dt_max = cfl * dt_cfl if dt is None else check_positive(dt, "dt")
    if dt_max > dt_cfl * (1 + 1e-12):
        raise SchemeError(f"dt={dt_max:g} violates the monotonicity bound {dt_cfl:g}")
    dt, n_steps, times, stops = _record_steps(T, dt_max, record_times)
    p_bound = 10.0 * p_max + 10.0 if p_bound is None else p_bound
    sigma_cap = dx / dt - eps / dx
    mode = 0 if linear else 1
    diag = np.zeros(3)
    snaps = {}
    trace = [(0.0, float(u[n_half]))]
    done = 0
    for t_rec, stop in zip(times, stops):
        _viscous_steps(u, stop - done, dt, dx, eps, c, src, mode, mode, theta, p_bound,
                       sigma_cap, diag)
        if diag[2] == 1.0:
            raise SchemeError(f"CFL violated: gradient {diag[1]:.3g} needs more dissipation "
                              f"than dt={dt:g} allows")
        if diag[2] == 2.0:
            raise SchemeError(f"gradient blow-up: |p|={diag[1]:.3g} > bound {p_bound:g}")
        if not np.all(np.isfinite(u)):
            raise SchemeError("non-finite solution")
        done = stop
        snaps[t_rec] = u.copy()
        trace.append((t_rec, float(u[n_half])))
    return PdeSolveResult(
        epsilon=eps, initial=tag, theta=theta if linear else math.nan,
        domain=(float(x[0]), float(x[-1])), dx=dx, dt=dt, T=float(T), x=x, snapshots=snaps,
        probe=float(u[n_half]), probe_trace=trace, cfl_ratio=float(diag[0]),
        max_gradient=float(diag[1]), steps=n_steps, sigma_bound=s_max,
        diagnostics={"R_probe": R, "R_run": R_run, "resolution_cells_per_eps": eps / dx,
                     "env_grid_step_scaled": eps * field.grid_step})


def tabulate_effective(H, p_max, n=2001, extra=()):
    """Uniform table of ``Hbar`` on ``[-p_max, p_max]``; ``extra`` slopes are made nodes by
    shifting the grid so the first of them falls on a node."""
    hp = 2.0 * p_max / (n - 1)
    shift = 0.0
    if extra:
        t0 = float(extra[0])
        shift = t0 - hp * round(t0 / hp)
    p = -p_max + shift + hp * np.arange(n + 1)
    return p, H.predict(p)


def solve_effective(H, initial, R=1.0, T=1.0, dx=0.01, dt=None, record_times=None,
                    cfl=0.9, p_table=None, margin=1.0):
    """Lax-Friedrichs solve of ``u_t = Hbar(u_x)`` with ``Hbar`` tabulated.

    The table is built on slopes covering the initial data with margin; the
    dissipation is the largest tabulated ``|Hbar'|``.
    """
    dx = check_positive(dx, "dx")
    if callable(initial):
        xs = np.linspace(-R - 10, R + 10, 2001)
        slope = float(np.max(np.abs(np.diff(initial(xs)))) / (xs[1] - xs[0]))
        extra = ()
    else:
        slope = abs(float(initial))
        extra = (float(initial),)
    p_max = slope + 1.0
    if p_table is None:
        p_tab, h_tab = tabulate_effective(H, p_max, extra=extra)
    else:
        p_tab, h_tab = p_table
    slopes = np.abs(np.diff(h_tab) / np.diff(p_tab))
    sigma = float(slopes.max()) if slopes.size else 1.0
    sigma = max(sigma, 1e-12)
    R_run = R + T * sigma + margin
    x, n_half = _grid(R_run, dx)
    u, tag, theta, linear = _initial(initial, x)
    dt_cfl = dx / sigma
    dt_max = cfl * dt_cfl if dt is None else check_positive(dt, "dt")
    if dt_max > dt_cfl * (1 + 1e-12):
        raise SchemeError(f"dt={dt_max:g} violates the monotonicity bound {dt_cfl:g}")
    dt, n_steps, times, stops = _record_steps(T, dt_max, record_times)
    mode = 0 if linear else 1
    diag = np.zeros(3)
    snaps = {}
    trace = [(0.0, float(u[n_half]))]
    done = 0
    for t_rec, stop in zip(times, stops):
        _effective_steps(u, stop - done, dt, dx, p_tab, h_tab, sigma, mode, mode, theta,
                         p_max + 0.5 * (p_tab[-1] - p_tab[0]), diag)
        if diag[2] == 3.0:
            raise SchemeError("slope left the tabulated range of Hbar")
        if diag[2] == 2.0:
            raise SchemeError("gradient blow-up")
        done = stop
        snaps[t_rec] = u.copy()
        trace.append((t_rec, float(u[n_half])))
    return PdeSolveResult(
        epsilon=0.0, initial=tag, theta=theta if linear else math.nan,
        domain=(float(x[0]), float(x[-1])), dx=dx, dt=dt, T=float(T), x=x, snapshots=snaps,
        probe=float(u[n_half]), probe_trace=trace, cfl_ratio=dt * sigma / dx,
        max_gradient=float(diag[1]), steps=n_steps, sigma_bound=sigma,
        diagnostics={"R_run": R_run, "p_table": [float(p_tab[0]), float(p_tab[-1])]})


def solve_hopf_cole(field, beta, epsilon, theta, R=1.0, T=1.0, dx=None, dt=None, margin=1.0):
    """``c = 0`` cross-check through ``u = eps log v``.

    ``phi = v exp(-theta x / eps)`` solves the linear equation
    ``phi_t = (eps/2) phi_xx + theta phi_x + (theta^2/(2 eps) + beta V(x/eps)/eps) phi``
    with ``phi(0) = 1``; it is stepped by Crank-Nicolson with zero-flux ends
    and renormalized each step, the log of the scale being carried apart.
    Returns ``u(T, 0)``.
    """
    eps = check_positive(epsilon, "epsilon")
    dx = eps / 8.0 if dx is None else dx
    R_run = run_radius(R, T, theta, 0.0, beta, margin)
    x, n_half = _grid(R_run, dx)
    lo, hi = x[0] / eps, x[-1] / eps
    if not field.covers(lo, hi):
        raise WindowError(f"field window {field.window} must cover [{lo:.1f}, {hi:.1f}]")
    # Crank-Nicolson error is driven by the growth rate (theta^2/2 + beta)/eps
    dt = dx / (4.0 * (1.0 + 0.5 * theta * theta + beta)) if dt is None else dt
    n_steps = int(math.ceil(T / dt - 1e-12))
    dt = T / n_steps
    n = x.size
    pot = (0.5 * theta * theta + beta * field.evaluate(x / eps)[0]) / eps
    d = 0.5 * eps / (dx * dx)
    a = 0.5 * theta / dx
    # operator L phi = d (phi_{j+1} - 2 phi_j + phi_{j-1}) + a (phi_{j+1} - phi_{j-1}) + pot phi
    lower = np.full(n, d - a)
    upper = np.full(n, d + a)
    diag = -2.0 * d + pot
    # zero-flux ends by reflection
    upper_0 = 2.0 * d
    lower_n = 2.0 * d
    ab = np.zeros((3, n))
    ab[0, 1:] = -0.5 * dt * upper[:-1]
    ab[0, 1] = -0.5 * dt * upper_0
    ab[1] = 1.0 - 0.5 * dt * diag
    ab[2, :-1] = -0.5 * dt * lower[1:]
    ab[2, -2] = -0.5 * dt * lower_n
    phi = np.ones(n)
    log_scale = 0.0
    for _ in range(n_steps):
        rhs = phi + 0.5 * dt * diag * phi
        rhs[1:-1] += 0.5 * dt * (upper[1:-1] * phi[2:] + lower[1:-1] * phi[:-2])
        rhs[0] += 0.5 * dt * upper_0 * phi[1]
        rhs[-1] += 0.5 * dt * lower_n * phi[-2]
        phi = solve_banded((1, 1), ab, rhs)
        m = phi.max()
        if not (m > 0 and math.isfinite(m)):
            raise SchemeError("Hopf-Cole iterate lost positivity")
        phi /= m
        log_scale += math.log(m)
    return eps * (math.log(phi[n_half]) + log_scale)


def _fit_order(eps, err):
    eps = np.asarray(eps, dtype=float)
    err = np.asarray(err, dtype=float)
    ok = err > 0
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(eps[ok]), np.log(err[ok]), 1)[0])


def homogenization_sweep(field, beta, c, theta_grid, epsilon_list, H=None, R=1.0, T=1.0,
                         probes=None, n_jobs=1, dx_factor=None, **solver_kwargs):
    """``|u^eps(T, 0) - T Hbar(theta)|`` over ``theta`` and ``eps``.

    ``probes`` are x-positions in ``[-R, R]`` for the locally uniform error
    ``max |u^eps(T, x) - T Hbar(theta) - theta x|``; the default is a grid
    on the box. ``dx_factor`` sets ``dx = eps / dx_factor`` per cell. The
    empirical order in ``eps`` is fitted, not asserted.
    """
    from .effective import build

    if H is None:
        H = build(field, beta, c)
    cells = [(float(th), float(e)) for th in theta_grid for e in epsilon_list]

    def run(cell):
        th, e = cell
        kw = dict(solver_kwargs)
        if dx_factor is not None:
            kw["dx"] = e / dx_factor
        return solve_viscous(field, beta, c, e, th, R=R, T=T, **kw)

    if n_jobs == 1:
        results = [run(cell) for cell in cells]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(run, cells))
    rows = []
    for (th, e), res in zip(cells, results):
        hbar = float(H.predict(th)[0])
        box = np.abs(res.x) <= R + 1e-12
        if probes is not None:
            idx = [int(np.argmin(np.abs(res.x - p))) for p in probes]
            box = np.zeros_like(box)
            box[idx] = True
        unif = float(np.max(np.abs(res.u_final[box] - T * hbar - th * res.x[box])))
        rows.append({"theta": th, "epsilon": e, "probe": res.probe, "H_bar": hbar,
                     "abs_error": abs(res.probe - T * hbar), "uniform_error": unif,
                     "cfl_ratio": res.cfl_ratio, "dx": res.dx, "dt": res.dt})
    summary = []
    for th in theta_grid:
        sub = sorted((r for r in rows if r["theta"] == float(th)), key=lambda r: -r["epsilon"])
        errs = [r["abs_error"] for r in sub]
        order = _fit_order([r["epsilon"] for r in sub], errs)
        for r in sub:
            r["fitted_order"] = order
        hbar = sub[0]["H_bar"]
        summary.append({
            "theta": float(th), "H_bar": hbar,
            "errors": errs,
            "monotone_decrease": all(b < a for a, b in zip(errs, errs[1:])),
            "final_relative_gap": errs[-1] / max(1.0, abs(hbar)),
            "fitted_order": order,
        })
    return {"rows": rows, "summary": summary, "regime": H.regime_,
            "theta_bar": H.theta_bar_}
