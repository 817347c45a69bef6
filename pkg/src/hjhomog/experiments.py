"""Reproducible experiment runs tying the computational modules together.

Every run takes an :class:`~hjhomog.config.ExperimentConfig`, writes CSV
tables (header row first) and JSON-lines reports into the output directory,
and returns the same records. Randomness derives from the config seed.
"""

import csv
import json
import math
import os
import platform

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .corrector import (
    free_energy_curve,
    neg_log_v,
    solve_riccati,
    tilted_free_energy,
)
from .effective import build, check_bound_structure, closed_form_constant
from .environment import PotentialField, audit_assumptions, regenerate
from .montecarlo import Policy, chebyshev_check, policy_upper_bounds
from .pde import solve_viscous


# ---------------------------------------------------------------------- output helpers
def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(record):
    """Deterministic one-line JSON."""
    return json.dumps(_clean(record), sort_keys=True, separators=(",", ":"))


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_csv_cell(row[k]) for k in header])


def _csv_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def output_dir(config, out_dir=None):
    path = out_dir or config.resolved_output_dir()
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------- provenance
def _versions():
    import numba
    import scipy
    import sklearn
    return {"hjhomog": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "scikit-learn": sklearn.__version__,
            "python": platform.python_version()}


def describe(config):
    """Provenance manifest: resolved config, derived seeds and versions."""
    seeds = {"top": int(config.seed), "environment": config.environment_seed}
    for label in ("figure1", "crosscheck", "properties", "mc"):
        seeds[label] = config.derived_seed(label)
    return {"package": "hjhomog", "format_version": config.format_version,
            "config": config.to_dict(), "fingerprint": config.fingerprint(),
            "seeds": seeds, "versions": _versions()}


def config_from_manifest(manifest):
    return ExperimentConfig.from_dict(manifest["config"])


def load_or_build_field(config, env_path=None):
    return PotentialField.load(env_path) if env_path else config.build_field()


# ---------------------------------------------------------------------- figure 1
def _hamiltonian_rows(H, grid):
    lam = np.array([H.Lambda(t) for t in grid])
    vals = H.predict(grid)
    ub = H.upper_bound(grid)
    rows = []
    for t, lv, hv, u in zip(grid, lam, vals, ub):
        rows.append({"theta": float(t), "Lambda": float(lv), "H_bar": float(hv),
                     "dashed": 0.5 * t * t - H.c * abs(t), "bound_CUB1": float(u),
                     "bound_CLB1": H.lower_bound(), "regime": H.regime_,
                     "theta_bar": H.theta_bar_})
    return rows


def effective_table(field, config, beta=None, c=None):
    """Fitted Hamiltonian, its CSV rows and the structure report on the config grid."""
    beta = config.beta if beta is None else beta
    c = config.c if c is None else c
    grid = config.theta_grid
    H = build(field, beta, c, tol_lambda=config.tol_lambda, **config.solver_kwargs())
    rows = _hamiltonian_rows(H, grid)
    report = check_bound_structure(H, grid, tol=config.tol_lambda, tol_cvx=config.tol_cvx)
    for r in rows:
        r["convexity_flag"] = report["convexity"]["convex"]
    return H, rows, report


EFFECTIVE_COLUMNS = ["theta", "H_bar", "regime", "theta_bar", "bound_CUB1", "bound_CLB1",
                     "convexity_flag"]
FIGURE1_COLUMNS = ["theta", "H_bar", "dashed", "Lambda", "bound_CUB1", "bound_CLB1",
                   "regime", "theta_bar", "convexity_flag"]


def _mc_kwargs(config):
    return {"batches": config.mc_batches, "tilt": config.mc_tilt,
            "resample": config.resample, "n_jobs": config.n_jobs}


def run_figure1(config, field=None, out_dir=None):
    """Lambda curve, H in a weak and a strong pair, dashed curves and MC witnesses.

    Writes ``lambda_curve.csv``, ``figure1_weak.csv``, ``figure1_strong.csv``
    and ``figure1.jsonl``; returns the summary records.
    """
    out = output_dir(config, out_dir)
    field = config.build_field() if field is None else field
    grid = config.theta_grid
    curve, flat = free_energy_curve(field, config.beta, grid, n_jobs=config.n_jobs,
                                    **config.solver_kwargs())
    write_csv(os.path.join(out, "lambda_curve.csv"), ["theta", "Lambda", "flat"],
              [{"theta": r.theta, "Lambda": r.Lambda, "flat": r.flat} for r in curve])
    records = []
    seed = config.derived_seed("figure1")
    for label, (beta, c) in (("weak", config.weak_pair), ("strong", config.strong_pair)):
        H, rows, report = effective_table(field, config, beta, c)
        write_csv(os.path.join(out, f"figure1_{label}.csv"), FIGURE1_COLUMNS, rows)
        witnesses = []
        for k, th in enumerate(config.witness_thetas):
            mc = policy_upper_bounds(field, beta, c, th, config.mc_t, config.mc_dt,
                                     config.mc_n_paths, seed + 10 * k, **_mc_kwargs(config))
            hb = float(H.predict(th)[0])
            witnesses.append({"theta": th, "H_bar": hb, "mc_policy": mc["minimum"]["policy"],
                              "mc_value": mc["minimum"]["value"],
                              "mc_stderr": mc["minimum"]["stderr"],
                              "difference": mc["minimum"]["value"] - hb})
        records.append({
            "record": "figure1", "pair": label, "beta": beta, "c": c,
            "regime": H.regime_, "theta_bar": H.theta_bar_,
            "theta_bar_interval": H.theta_bar_interval_, "plateau_value": H.flat_value_,
            "plateau_width": 2.0 * H.plateau_half_width_,
            "convex": report["convexity"]["convex"], "structure_passed": report["all_passed"],
            "witnesses": witnesses})
    records.append({"record": "lambda_curve", "beta": config.beta,
                    "flat_interval": None if flat is None else list(flat)})
    write_jsonl(os.path.join(out, "figure1.jsonl"), records)
    return records


# ---------------------------------------------------------------------- property suite
def _check(name, passed, slack=None, **detail):
    rec = {"check": name, "passed": bool(passed), "slack": slack}
    rec.update(detail)
    return rec


def _env_checks(field):
    out = []
    vmin, vmax = float(field.values.min()), float(field.values.max())
    out.append(_check("environment.range", vmin >= 0 and vmax <= 1,
                      min(vmin, 1.0 - vmax), min=vmin, max=vmax))
    if field.kind != "constant":
        aud = audit_assumptions(field)
        out.append(_check("environment.normalization", aud["normalization_ok"],
                          1e-3 - max(vmin, 1.0 - vmax)))
    h = field.grid_step
    fd = (field.values[2:] - field.values[:-2]) / (2 * h)
    err = float(np.abs(fd - field.derivative_values[1:-1]).max())
    out.append(_check("environment.derivative_consistency", err <= h, h - err, error=err))
    if field.kind != "custom-samples":
        lo, hi = field.window
        mid = 0.5 * (lo + hi)
        span = 0.25 * (hi - lo)
        sub = regenerate(field, (mid - span, mid + span))
        i0 = sub.n0 - field.n0
        diff = float(np.abs(field.values[i0:i0 + sub.n] - sub.values).max())
        out.append(_check("environment.window_consistency", diff == 0.0, -diff, max_diff=diff))
    back = PotentialField.from_json(field.to_json())
    same = (np.array_equal(back.values, field.values)
            and np.array_equal(back.derivative_values, field.derivative_values))
    out.append(_check("environment.serialization_roundtrip", same, 0.0 if same else -1.0))
    return out


def _triples(field, beta, rng, n, window):
    lo, hi = window
    out = []
    for _ in range(n):
        x, y, z = np.sort(rng.uniform(lo, hi, 3))
        lam = beta * field.sup_level + rng.uniform(1e-3, 3.0)
        out.append((float(x), float(y), float(z), float(lam)))
    return out


def sandwich_additivity(field, beta, n_triples, seed, window=None, max_buffer=40.0):
    """Worst violations of the hitting-functional sandwich and additivity.

    Returns ``(sandwich_slack, additivity_error)`` as absolute errors; the
    sandwich slack is negative when a bound is violated.
    """
    rng = np.random.default_rng(seed)
    if window is None:
        lo, hi = field.window
        window = (lo + max_buffer + 1.0, hi - max_buffer - 1.0)
    worst_s = math.inf
    worst_a = 0.0
    for x, y, z, lam in _triples(field, beta, rng, n_triples, window):
        a = math.sqrt(max(2.0 * (lam - beta * field.sup_level), 0.0))
        b = math.sqrt(2.0 * lam)
        for p, q in ((x, z), (z, x)):
            val = neg_log_v(field, beta, lam, p, q, max_buffer=max_buffer)
            d = abs(q - p)
            worst_s = min(worst_s, val - a * d, b * d - val)
        xy = neg_log_v(field, beta, lam, x, y, max_buffer=max_buffer)
        yz = neg_log_v(field, beta, lam, y, z, max_buffer=max_buffer)
        xz = neg_log_v(field, beta, lam, x, z, max_buffer=max_buffer)
        worst_a = max(worst_a, abs(xz - xy - yz))
    return worst_s, worst_a


def _lambda_checks(field, config, grid):
    out = []
    beta = config.beta
    kw = config.solver_kwargs()
    tol = config.tol_lambda
    curves = {}
    for b in (0.5 * beta, beta, 2.0 * beta):
        curves[b] = np.array([r.Lambda for r in free_energy_curve(
            field, b, grid, n_jobs=config.n_jobs, **kw)[0]])
    lam = curves[beta]
    mirror = np.array([r.Lambda for r in free_energy_curve(
        field, beta, -grid[::-1], n_jobs=config.n_jobs, **kw)[0]])[::-1]
    even = float(np.abs(lam - mirror).max())
    out.append(_check("free_energy.evenness", even == 0.0, -even))
    lower = np.maximum(beta * field.sup_level, 0.5 * grid ** 2)
    upper = beta * field.sup_level + 0.5 * grid ** 2
    slack = float(min((lam - lower).min(), (upper - lam).min()))
    out.append(_check("free_energy.bounds", slack >= -tol, slack + tol))
    mono = float(min((curves[beta] - curves[0.5 * beta]).min(),
                     (curves[2.0 * beta] - curves[beta]).min()))
    out.append(_check("free_energy.beta_monotone", mono >= -tol, mono + tol))
    mid = 0.5 * (lam[:-2] + lam[2:]) - lam[1:-1]
    cvx = float(mid.min())
    out.append(_check("free_energy.midpoint_convexity", cvx >= -config.tol_cvx,
                      cvx + config.tol_cvx))
    flat = [abs(t) for t, v in zip(grid, lam) if v == beta * field.sup_level]
    fl = None
    if flat:
        half = max(flat)
        inside = [v for t, v in zip(grid, lam) if abs(t) <= half]
        fl = [-half, half] if all(v == beta * field.sup_level for v in inside) else None
    out.append(_check("free_energy.flat_piece", fl is not None, None, interval=fl))
    if field.kind == "constant":
        closed = beta * field.sup_level + 0.5 * grid ** 2
        err = float(np.abs(lam - closed).max())
        out.append(_check("closed_form.free_energy", err <= 1e-8, 1e-8 - err, error=err))
    return out


def _corrector_checks(field, config):
    out = []
    beta = config.beta
    lo, hi = field.window
    window = (lo + config.max_buffer, hi - config.max_buffer)
    for theta in sorted({abs(config.theta_max), 0.5 * abs(config.theta_max)}):
        res = tilted_free_energy(field, beta, theta, **config.solver_kwargs())
        if res.flat:
            continue
        prof = solve_riccati(field, beta, theta, res.lambda_o, window, tol_u=math.inf,
                             max_buffer=config.max_buffer)
        out.append(_check("corrector.gradient_band", prof.band_excess <= config.tol_u,
                          config.tol_u - prof.band_excess, theta=theta,
                          exceedance=prof.band_excess, band=list(prof.band)))
        out.append(_check("corrector.ode_residual", prof.ode_residual <= config.tol_ode,
                          config.tol_ode - prof.ode_residual, theta=theta))
        sub = prof.sublinearity()
        out.append(_check("corrector.sublinearity", True, None, theta=theta, warning_only=True,
                          sequence=sub))
    tol = 1e-6 if field.kind == "constant" else 1e-4
    s, a = sandwich_additivity(field, beta, 20, config.derived_seed("properties"),
                               max_buffer=config.max_buffer)
    out.append(_check("corrector.sandwich", s >= -tol, s + tol))
    out.append(_check("corrector.additivity", a <= tol, tol - a, error=a))
    if field.kind == "constant":
        level = field.sup_level
        lam = beta * level + 0.7
        val = neg_log_v(field, beta, lam, -3.0, 4.0, max_buffer=config.max_buffer)
        err = abs(val - 7.0 * math.sqrt(2.0 * (lam - beta * level)))
        out.append(_check("closed_form.hitting_functional", err <= 1e-8, 1e-8 - err,
                          error=err))
    return out


def _effective_checks(field, config, grid):
    out = []
    H = build(field, config.beta, config.c, tol_lambda=config.tol_lambda,
              **config.solver_kwargs())
    report = check_bound_structure(H, grid, tol=config.tol_lambda, tol_cvx=config.tol_cvx)
    for name, rec in report.items():
        if name == "all_passed":
            continue
        slack = rec.get("slack")
        detail = {k: v for k, v in rec.items() if k not in ("passed", "slack")}
        out.append(_check(f"effective.{name}", rec["passed"], slack, **detail))
    if field.kind == "constant":
        closed = closed_form_constant(field.sup_level, config.beta, config.c, grid)
        err = float(np.abs(H.predict(grid) - closed).max())
        out.append(_check("closed_form.effective", err <= 1e-8, 1e-8 - err, error=err))
    return out


def _pde_checks(field, config):
    """Symbolic monotonicity of the explicit scheme for every configured epsilon."""
    out = []
    for eps in config.pde_epsilons:
        for theta in config.pde_thetas:
            dx = eps / config.pde_dx_factor
            slope = abs(theta)
            p_max = slope + config.c + math.sqrt(2.0 * (config.beta + 0.5 * slope * slope))
            s = max(0.0, p_max + config.c - eps / dx)
            dt_cfl = dx * dx / (eps + s * dx)
            dt = 0.9 * dt_cfl if config.pde_dt is None else config.pde_dt
            centre = 1.0 - dt * (eps / dx ** 2 + s / dx)
            side = eps / dx + s - (p_max + config.c)
            ok = centre >= 0 and side >= -1e-12
            out.append(_check("pde.monotone_scheme", ok, min(centre, side), epsilon=eps,
                              theta=theta, dx=dx, dt=dt))
    return out


def _mc_checks(field, config):
    if config.c <= 0:
        return []
    n = max(config.mc_batches, min(config.mc_n_paths, 4000))
    need = 2.0 * (abs(config.theta_max) + config.c) + 30.0
    lo, hi = field.window
    if lo > -need or hi < need:
        return []
    res = chebyshev_check(field, Policy.const_right(config.c), 1.0, 1.0, 2.0, config.mc_dt,
                          n, config.derived_seed("properties", 1))
    detail = {k: v for k, v in res.items() if k != "passed"}
    return [_check("montecarlo.exponential_chebyshev", res["passed"],
                   res["bound"] - res["empirical"], **detail)]


def run_property_suite(config, field=None, out_dir=None, include_mc=True):
    """Every invariant as a named check; writes ``properties.jsonl``."""
    field = config.build_field() if field is None else field
    grid = config.theta_grid
    checks = []
    checks += _env_checks(field)
    checks += _lambda_checks(field, config, grid)
    checks += _corrector_checks(field, config)
    checks += _effective_checks(field, config, grid)
    checks += _pde_checks(field, config)
    if include_mc:
        checks += _mc_checks(field, config)
    if out_dir is not False:
        write_jsonl(os.path.join(output_dir(config, out_dir), "properties.jsonl"), checks)
    return checks


# ---------------------------------------------------------------------- crosscheck
def run_crosscheck(config, field=None, out_dir=None, thetas=None):
    """Corrector, best-policy Monte Carlo and smallest-epsilon PDE at each slope.

    The acceptance band for a row is ``3 stderr + tol_lambda + pde_gap`` where
    ``pde_gap`` is the change of the probe between the two smallest epsilons
    (or the configured ``pde.gap`` with a single epsilon). Rows on a constant
    field strictly inside the plateau are reported but not judged, since the
    constant field has no valleys and the plateau formula does not apply.
    """
    field = config.build_field() if field is None else field
    thetas = config.pde_thetas if thetas is None else thetas
    H = build(field, config.beta, config.c, tol_lambda=config.tol_lambda,
              **config.solver_kwargs())
    eps = sorted(config.pde_epsilons)
    seed = config.derived_seed("crosscheck")
    rows = []
    for k, th in enumerate(thetas):
        hbar = float(H.predict(th)[0])
        mc = policy_upper_bounds(field, config.beta, config.c, th, config.mc_t, config.mc_dt,
                                 config.mc_n_paths, seed + 10 * k, **_mc_kwargs(config))
        probes = []
        for e in eps[:2]:
            res = solve_viscous(field, config.beta, config.c, e, th, R=config.pde_R,
                                T=config.pde_T, dx=e / config.pde_dx_factor, dt=config.pde_dt)
            probes.append(res.probe / config.pde_T)
        pde_gap = abs(probes[0] - probes[1]) if len(probes) > 1 else config.pde_gap
        vals = {"corrector": hbar, "montecarlo": mc["minimum"]["value"], "pde": probes[0]}
        names = sorted(vals)
        disc = max(abs(vals[a] - vals[b]) for a in names for b in names)
        band = 3.0 * mc["minimum"]["stderr"] + config.tol_lambda + pde_gap
        in_scope = not (field.kind == "constant" and abs(th) < H.plateau_half_width_)
        rows.append({"theta": float(th), "H_bar": hbar, "mc_value": vals["montecarlo"],
                     "mc_stderr": mc["minimum"]["stderr"], "mc_policy": mc["minimum"]["policy"],
                     "pde_probe": probes[0], "pde_epsilon": eps[0], "pde_gap": pde_gap,
                     "max_discrepancy": disc, "band": band, "in_scope": in_scope,
                     "passed": (disc <= band) if in_scope else None})
    if out_dir is not False:
        out = output_dir(config, out_dir)
        write_csv(os.path.join(out, "crosscheck.csv"),
                  ["theta", "H_bar", "mc_value", "mc_stderr", "mc_policy", "pde_probe",
                   "pde_epsilon", "max_discrepancy", "band", "in_scope", "passed"], rows)
        write_jsonl(os.path.join(out, "crosscheck.jsonl"), rows)
    return rows
