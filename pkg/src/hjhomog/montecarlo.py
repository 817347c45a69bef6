"""Monte Carlo over (controlled) Brownian motion in the potential.

Every estimator splits its paths into independent batches. Batch ``b`` draws
its normals from a Philox generator keyed by ``(seed, label, b)``; the value
reported is the log of the mean of the batch estimates of the expectation,
and the standard error is the spread of the per-batch log estimates.

Free-energy type expectations ``E[exp(beta int V + theta X_t)]`` are
estimated under a constant Girsanov tilt. On random potentials the path
weights degenerate as ``t`` grows, so the estimator can run as an
interacting particle system: whenever the effective sample size drops below
a threshold the particles are resampled and the removed normalization is
carried along. This keeps the estimate of the expectation unbiased.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from . import _paths
from ._validation import (
    ConfigurationError,
    UnreliableEstimateError,
    WindowError,
    check_positive,
)

MIN_BATCHES = 16
AUDIT_FLOOR = 1e-10
MAX_CHUNK = 2 ** 21  # normals drawn per generator call
POLICY_CODES = {"Zero": _paths.ZERO, "ConstLeft": _paths.CONST_LEFT,
                "ConstRight": _paths.CONST_RIGHT, "ValleyTrap": _paths.VALLEY_TRAP,
                "Tilt": _paths.ZERO}
_LABELS = {"paths": 1, "estimate": 2, "audit": 3, "hitting": 4, "confine": 5,
           "local_time": 6, "hitting_functional": 7}


@dataclass(frozen=True)
class Policy:
    """Admissible drift ``alpha``.

    ``variant`` is one of Zero, ConstLeft (``-c``), ConstRight (``+c``),
    ValleyTrap (``-c sign(x - x_star)`` with ``sign(0) = 1``) or Tilt (a
    constant ``drift`` used only for importance sampling).
    """

    variant: str = "Zero"
    c: float = 0.0
    x_star: float = 0.0
    drift: float = 0.0

    def __post_init__(self):
        if self.variant not in POLICY_CODES:
            raise ConfigurationError(f"unknown policy variant {self.variant!r}")
        check_positive(self.c, "c", allow_zero=True)

    @classmethod
    def zero(cls):
        return cls("Zero")

    @classmethod
    def const_left(cls, c):
        return cls("ConstLeft", c=c)

    @classmethod
    def const_right(cls, c):
        return cls("ConstRight", c=c)

    @classmethod
    def valley_trap(cls, x_star, c):
        return cls("ValleyTrap", c=c, x_star=x_star)

    @classmethod
    def tilt(cls, drift):
        return cls("Tilt", drift=drift)

    @property
    def code(self):
        return POLICY_CODES[self.variant]

    @property
    def speed(self):
        """Bound on ``|alpha|`` used for window sizing."""
        return abs(self.drift) if self.variant == "Tilt" else self.c

    def drift_at(self, x):
        x = np.asarray(x, dtype=float)
        if self.variant == "Tilt":
            return np.full_like(x, self.drift)
        out = np.array([_paths.policy_drift(self.code, float(v), self.c, self.x_star)
                        for v in np.ravel(x)])
        return out.reshape(x.shape)

    def to_dict(self):
        return {"variant": self.variant, "c": self.c, "x_star": self.x_star,
                "drift": self.drift}


@dataclass
class PathEstimate:
    """``(1/t) log E[exp(functional)]`` with a batch standard error."""

    t: float
    n_paths: int
    dt: float
    value: float
    stderr: float
    batches: int
    tilt_used: float
    ess_min: float = 1.0
    resamples: int = 0
    batch_values: list = dc_field(default_factory=list)
    seed: int = 0
    policy: dict = dc_field(default_factory=dict)
    beta: float = 0.0
    theta: float = 0.0

    def to_dict(self):
        return dict(self.__dict__)


def child_generator(seed, label, index):
    """Philox generator for component ``label`` and batch ``index``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_LABELS[label], int(index)))
    return np.random.Generator(np.random.Philox(ss))


def _split(n_paths, batches):
    if batches < MIN_BATCHES:
        raise ConfigurationError(f"at least {MIN_BATCHES} batches are required")
    if n_paths < batches:
        raise ConfigurationError("n_paths must be at least the number of batches")
    return n_paths // batches


def _field_arrays(field):
    lo, hi = field.window
    return (float(field.n0), field.grid_step, np.ascontiguousarray(field.values),
            np.ascontiguousarray(field.derivative_values), lo, hi)


def required_window(t, speed, x0=0.0, margin=5.0):
    """Window that paths with drift bounded by ``speed`` leave with negligible probability."""
    reach = speed * t + 6.0 * math.sqrt(t) + margin
    return (x0 - reach, x0 + reach)


def _check_window(field, t, speed, x0):
    need = required_window(t, speed, x0)
    lo, hi = field.window
    if need[0] < lo or need[1] > hi:
        raise WindowError(
            f"field window {field.window} is too small for horizon t={t}: need at least "
            f"[{need[0]:.1f}, {need[1]:.1f}]")


def _step_count(t, dt):
    n = int(round(t / dt))
    if n < 1 or abs(n * dt - t) > 1e-9 * max(1.0, t):
        raise ConfigurationError(f"t={t} must be a multiple of dt={dt}")
    return n


def _run_batch(field, policy, beta, theta, kappa, dt, n, rng, stops, x0, delta,
               resample_below, on_stop=None):
    """Simulate one batch and call ``on_stop(step, state, diag)`` at each stop."""
    n0, h, vals, ders, lo, hi = _field_arrays(field)
    state = np.zeros((6, n))
    state[0] = x0
    diag = np.array([0.0, 1.0, 0.0])
    x_star = policy.x_star
    c = policy.c
    kappa_total = kappa + (policy.drift if policy.variant == "Tilt" else 0.0)
    done = 0
    chunk = max(1, MAX_CHUNK // n)
    for stop in stops:
        while done < stop:
            m = min(chunk, stop - done)
            z = rng.standard_normal((m, n))
            u = rng.random(m)
            status = _paths.advance(state, z, u, dt, policy.code, c, x_star, kappa_total,
                                    beta, theta, n0, h, vals, ders, lo, hi, delta,
                                    resample_below, diag)
            if status == _paths.EXIT:
                raise WindowError(
                    f"a path left the field window {field.window} before t={(done + m) * dt:g}")
            if status == _paths.NONFINITE:
                raise UnreliableEstimateError("non-finite path state")
            done += m
        if on_stop is not None:
            on_stop(stop, state, diag)
    return state, diag


@dataclass
class PathBatch:
    """Positions at recorded times plus the per-path accumulators at ``t``."""

    times: np.ndarray
    positions: np.ndarray
    int_v: np.ndarray
    local_time: np.ndarray
    brownian: np.ndarray
    alpha_db: np.ndarray


def simulate_paths(field, policy, t, dt, n_paths, seed, record_times=None, x0=0.0,
                   batches=MIN_BATCHES, delta=None):
    """Euler scheme for ``dX = alpha(X) dt + dB`` from ``x0``.

    ``int V`` uses the midpoint of each step and the local time at
    ``policy.x_star`` is the occupation of ``[x_star - delta, x_star + delta]``
    divided by ``2 delta`` (``delta = sqrt(dt)`` by default).
    """
    check_positive(t, "t")
    check_positive(dt, "dt")
    n_steps = _step_count(t, dt)
    n = _split(n_paths, batches)
    _check_window(field, t, policy.speed, x0)
    delta = math.sqrt(dt) if delta is None else delta
    if record_times is None:
        record_times = [t]
    stops = sorted({_step_count(r, dt) for r in record_times} | {n_steps})
    pos = np.empty((len(stops), n * batches))
    accs = []
    for b in range(batches):
        rng = child_generator(seed, "paths", b)
        cols = slice(b * n, (b + 1) * n)

        def on_stop(step, state, diag, cols=cols):
            pos[stops.index(step), cols] = state[0]

        state, _ = _run_batch(field, policy, 0.0, 0.0, 0.0, dt, n, rng, stops, x0, delta, 0.0,
                              on_stop)
        accs.append(state.copy())
    acc = np.concatenate(accs, axis=1)
    return PathBatch(times=np.array(stops) * dt, positions=pos, int_v=acc[2],
                     local_time=acc[4] / (2 * delta), brownian=acc[1], alpha_db=acc[5])


def _combine(log_z, t):
    """Value and standard error from per-batch log estimates of the expectation."""
    log_z = np.asarray(log_z, dtype=float)
    if not np.all(np.isfinite(log_z)):
        raise UnreliableEstimateError("a batch estimate is not finite")
    b = log_z.size
    value = (logsumexp(log_z) - math.log(b)) / t
    per = log_z / t
    spread = float(np.std(per, ddof=1) / math.sqrt(b))
    # resolution floor: accumulated round-off in the exponent over the path
    floor = 1e-12 * (1.0 + abs(value))
    return float(value), max(spread, floor), [float(v) for v in per]


def estimate_functional(field, policy, beta, theta, t, dt, n_paths, seed, tilt=None,
                        batches=MIN_BATCHES, resample=None, ess_threshold=0.5,
                        min_ess=0.01, x0=0.0, max_tilt=10.0, n_jobs=1):
    """``(1/t) log E_x0[exp(beta int V(X^alpha) + theta (X^alpha_t - x0))]``.

    Paths are simulated with an extra constant drift ``tilt`` (default
    ``theta`` for the constant and zero policies, 0 for the valley trap)
    and reweighted by ``exp(-tilt B_t - tilt^2 t / 2)``.

    Parameters
    ----------
    resample : bool or None
        Run as an interacting particle system. ``None`` enables it for
        non-constant fields.
    ess_threshold : float
        ESS fraction that triggers resampling.
    min_ess : float
        Without resampling, a final ESS fraction below this raises
        :class:`UnreliableEstimateError`.
    """
    beta = check_positive(beta, "beta", allow_zero=True)
    check_positive(t, "t")
    check_positive(dt, "dt")
    n_steps = _step_count(t, dt)
    n = _split(n_paths, batches)
    if tilt is None:
        tilt = 0.0 if policy.variant == "ValleyTrap" else float(theta)
    if abs(tilt) > max_tilt:
        raise ConfigurationError(f"|tilt| exceeds max_tilt={max_tilt}")
    if resample is None:
        resample = field.kind != "constant"
    _check_window(field, t, abs(tilt) + policy.speed, x0)
    below = ess_threshold if resample else 0.0

    def run(b):
        rng = child_generator(seed, "estimate", b)
        state, diag = _run_batch(field, policy, beta, theta, tilt, dt, n, rng, [n_steps], x0,
                                 math.sqrt(dt), below)
        logw = state[3]
        ess = float(_paths._ess_fraction(logw))
        log_z = diag[0] + logsumexp(logw) - math.log(n)
        return log_z, min(ess, diag[1]), int(diag[2]), ess

    if n_jobs == 1:
        out = [run(b) for b in range(batches)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            out = list(ex.map(run, range(batches)))
    log_z = [o[0] for o in out]
    ess_min = min(o[1] for o in out)
    if not resample and min(o[3] for o in out) < min_ess:
        raise UnreliableEstimateError(
            f"effective sample size collapsed to {min(o[3] for o in out):.2%} of the batch; "
            "enable resampling, change the tilt or shorten t")
    value, stderr, per = _combine(log_z, t)
    return PathEstimate(t=t, n_paths=n * batches, dt=dt, value=value, stderr=stderr,
                        batches=batches, tilt_used=float(tilt), ess_min=float(ess_min),
                        resamples=sum(o[2] for o in out), batch_values=per, seed=int(seed),
                        policy=policy.to_dict(), beta=beta, theta=float(theta))


def policy_upper_bounds(field, beta, c, theta, t, dt, n_paths, seed, valley=None,
                        valley_level=0.25, valley_length=2.0, **kwargs):
    """Estimates under ConstLeft, ConstRight and ValleyTrap; each bounds H from above.

    The trap centre is the midpoint of the lowest valley of length
    ``valley_length`` (or the given ``valley`` x-coordinate). With ``c = 0``
    all policies reduce to Zero.
    """
    from .environment import lowest_valley

    report = {"policies": {}, "valley": None, "notes": []}
    if c == 0:
        est = estimate_functional(field, Policy.zero(), beta, theta, t, dt, n_paths, seed,
                                  **kwargs)
        for name in ("ConstLeft", "ConstRight", "ValleyTrap"):
            report["policies"][name] = est.to_dict()
        report["minimum"] = {"policy": "Zero", "value": est.value, "stderr": est.stderr}
        return report
    policies = {"ConstLeft": Policy.const_left(c), "ConstRight": Policy.const_right(c)}
    if valley is None:
        try:
            lo, hi = field.window
            reach = required_window(t, c + abs(kwargs.get("tilt") or 0.0))
            feat = lowest_valley(field, valley_length, within=(lo - reach[0], hi - reach[1]))
        except Exception as exc:  # missing valley degrades the report only
            feat = None
            report["notes"].append(f"no valley found: {exc}")
        if feat is not None:
            valley = feat.center
            report["valley"] = {"a": feat.a, "b": feat.b, "level": feat.level}
            if feat.level > valley_level:
                report["notes"].append(
                    f"lowest valley level {feat.level:.3g} exceeds {valley_level}")
    if valley is not None:
        policies["ValleyTrap"] = Policy.valley_trap(valley, c)
    best = None
    for i, (name, pol) in enumerate(policies.items()):
        x0 = pol.x_star if name == "ValleyTrap" else 0.0
        est = estimate_functional(field, pol, beta, theta, t, dt, n_paths, seed + i, x0=x0,
                                  **kwargs)
        report["policies"][name] = est.to_dict()
        if best is None or est.value < best[1]:
            best = (name, est.value, est.stderr)
    report["minimum"] = {"policy": best[0], "value": best[1], "stderr": best[2]}
    return report


def _audit_run(field, policy, beta, theta, profile, lam_shift, t_list, dt, n_paths, seed,
               batches, tilt, x0, label_offset):
    """Batch means of ``M_t * dP/dQ`` at each time in ``t_list``."""
    n = _split(n_paths, batches)
    stops = [_step_count(tt, dt) for tt in t_list]
    f0 = profile.F(x0)
    means = np.empty((batches, len(stops)))
    for b in range(batches):
        rng = child_generator(seed, "audit", label_offset * 1000 + b)

        def on_stop(step, state, diag, b=b):
            tt = step * dt
            xs = state[0]
            log_m = (beta * state[2] + theta * (xs - x0) + profile.F(xs) - f0
                     - lam_shift * tt - tilt * state[1] - 0.5 * tilt * tilt * tt)
            means[b, stops.index(step)] = float(np.mean(np.exp(log_m)))

        _run_batch(field, policy, 0.0, 0.0, tilt, dt, n, rng, sorted(set(stops)), x0,
                   math.sqrt(dt), 0.0, on_stop)
    out = []
    for j, tt in enumerate(t_list):
        m = float(means[:, j].mean())
        se = float(means[:, j].std(ddof=1) / math.sqrt(batches))
        # on constant fields the weighted product is 1 up to accumulated round-off
        out.append({"t": float(tt), "mean": m, "stderr": max(se, AUDIT_FLOOR * max(1.0, m))})
    return out


def martingale_audit(field, beta, theta, corrector, t_list, n_paths, seed, dt=1e-3,
                     c=None, controlled_corrector=None,
                     policies=("ConstLeft", "ConstRight", "ValleyTrap"), x_star=None,
                     batches=MIN_BATCHES, tilt=None, n_sigma=3.0):
    """Check ``E[M_t] = 1`` and, with a control bound ``c``, ``E[M^alpha_t] >= 1``.

    ``corrector`` is the profile for slope ``theta`` at ``lambda_o``; the
    uncontrolled exponent is
    ``beta int V + theta X_t + F(X_t) - lambda_o t``. With ``c`` and
    ``controlled_corrector`` (slope ``theta - c`` at ``lambda_o(theta - c)``),
    the controlled exponent is
    ``beta int V + theta X_t + F(X_t) - (lambda_o(theta - c) - c^2/2) t``,
    a martingale under ConstLeft and a submartingale under any policy when
    ``theta + F' >= 0``. All runs use a constant tilt (default ``theta``).
    """
    t_list = [float(tt) for tt in t_list]
    tilt = float(theta) if tilt is None else float(tilt)
    span = max(t_list)
    lo, hi = corrector.window
    report = {"uncontrolled": None, "controlled": {}, "tilt": tilt, "t_list": t_list}
    _check_window(field, span, abs(tilt), 0.0)
    need = required_window(span, abs(tilt))
    if need[0] < lo or need[1] > hi:
        raise WindowError(f"corrector window {corrector.window} too small; need {need}")
    rows = _audit_run(field, Policy.zero(), beta, theta, corrector, corrector.lam, t_list, dt,
                      n_paths, seed, batches, tilt, 0.0, 0)
    for r in rows:
        r["passed"] = abs(r["mean"] - 1.0) <= n_sigma * r["stderr"]
    report["uncontrolled"] = rows
    if c is None or controlled_corrector is None:
        return report
    prof = controlled_corrector
    lam_shift = prof.lam - 0.5 * c * c
    need = required_window(span, abs(tilt) + c)
    if need[0] < prof.window[0] or need[1] > prof.window[1]:
        raise WindowError(f"controlled corrector window {prof.window} too small; need {need}")
    _check_window(field, span, abs(tilt) + c, 0.0)
    for i, name in enumerate(policies):
        if name == "ConstLeft":
            pol = Policy.const_left(c)
        elif name == "ConstRight":
            pol = Policy.const_right(c)
        elif name == "ValleyTrap":
            pol = Policy.valley_trap(0.0 if x_star is None else x_star, c)
        else:
            raise ConfigurationError(f"unknown policy {name!r}")
        rows = _audit_run(field, pol, beta, theta, prof, lam_shift, t_list, dt, n_paths,
                          seed, batches, tilt, 0.0, i + 1)
        for r in rows:
            if name == "ConstLeft":
                r["passed"] = abs(r["mean"] - 1.0) <= n_sigma * r["stderr"]
                r["kind"] = "martingale"
            else:
                r["passed"] = r["mean"] >= 1.0 - n_sigma * r["stderr"]
                r["kind"] = "submartingale"
        report["controlled"][name] = rows
    return report


def hitting_laplace(a, x, y):
    """``E_x[exp(-a tau_y)] = exp(-sqrt(2a) |x - y|)`` for Brownian motion."""
    a = check_positive(a, "a", allow_zero=True)
    return math.exp(-math.sqrt(2.0 * a) * abs(x - y))


def _hitting_batches(seed, label, batches, n, dt, t_max, x0, target, beta, lam, arrays):
    n0, h, vals, ders, lo, hi = arrays
    n_steps = _step_count(t_max, dt)
    chunk = max(1, MAX_CHUNK // n)
    vals_out = np.empty((batches, n))
    unfinished = 0
    for b in range(batches):
        rng = child_generator(seed, label, b)
        x = np.full(n, float(x0))
        acc = np.zeros(n)
        tau = np.full(n, -1.0)
        done = 0
        running = n
        while done < n_steps and running > 0:
            m = min(chunk, n_steps - done)
            z = rng.standard_normal((m, n))
            u = rng.random((m, n))
            running = _paths.hitting_chunk(x, acc, tau, z, u, dt, done, target, beta, lam,
                                           n0, h, vals, ders, lo, hi)
            if running < 0:
                raise WindowError("a path left the window before hitting the target")
            done += m
        unfinished += int((tau < 0).sum())
        vals_out[b] = np.where(tau >= 0, np.exp(acc), 0.0)
    return vals_out, unfinished


def hitting_laplace_mc(a, x, y, dt=1e-3, n_paths=16000, seed=0, t_max=40.0,
                       batches=MIN_BATCHES):
    """Monte Carlo estimate of ``E_x[exp(-a tau_y)]`` with its standard error.

    Paths still running at ``t_max`` contribute at most ``exp(-a t_max)``,
    which is reported as ``truncation``.
    """
    a = check_positive(a, "a", allow_zero=True)
    n = _split(n_paths, batches)
    arrays = (0.0, 1.0, np.zeros(2), np.zeros(2), -math.inf, math.inf)
    vals, unfinished = _hitting_batches(seed, "hitting", batches, n, dt, t_max, x, y, 0.0, a,
                                        arrays)
    bm = vals.mean(axis=1)
    trunc = unfinished / (n * batches) * math.exp(-a * t_max)
    return {"estimate": float(bm.mean()), "stderr": float(bm.std(ddof=1) / math.sqrt(batches)),
            "exact": hitting_laplace(a, x, y), "truncation": trunc, "unfinished": unfinished,
            "dt": dt, "n_paths": n * batches}


def hitting_functional_mc(field, beta, lam, x, y, dt=1e-3, n_paths=16000, seed=0, t_max=40.0,
                          batches=MIN_BATCHES):
    """Monte Carlo ``E_x[exp(beta int_0^tau V - lam tau)]`` for the first hit of ``y``."""
    if lam < beta * field.sup_level:
        raise ConfigurationError("lam must be at least beta sup V")
    n = _split(n_paths, batches)
    vals, unfinished = _hitting_batches(seed, "hitting_functional", batches, n, dt, t_max, x,
                                        y, beta, lam, _field_arrays(field))
    bm = vals.mean(axis=1)
    est = float(bm.mean())
    se = float(bm.std(ddof=1) / math.sqrt(batches))
    return {"estimate": est, "stderr": se, "neg_log": -math.log(est),
            "neg_log_stderr": se / est, "unfinished": unfinished,
            "truncation": unfinished / (n * batches) * math.exp((beta - lam) * t_max)}


def confinement_rate(y, t, n_paths, seed, dt=1e-3, batches=MIN_BATCHES, ess_threshold=0.5,
                     min_t_factor=8.0):
    """``(1/t) log P_0(|B_s| < y for s <= t)`` by a resampled killed particle system.

    Each step multiplies a particle's weight by its Brownian-bridge survival
    probability; resampling restores the population. Exact value for large
    ``t``: ``-pi^2/(8 y^2) + log(4/pi)/t``.
    """
    y = check_positive(y, "y")
    if t < min_t_factor * y * y:
        raise ConfigurationError(f"t must be at least {min_t_factor} y^2")
    n_steps = _step_count(t, dt)
    n = _split(n_paths, batches)
    chunk = max(1, MAX_CHUNK // n)
    log_p = []
    ess_min = 1.0
    for b in range(batches):
        rng = child_generator(seed, "confine", b)
        x = np.zeros(n)
        logw = np.zeros(n)
        diag = np.array([0.0, 1.0])
        done = 0
        while done < n_steps:
            m = min(chunk, n_steps - done)
            z = rng.standard_normal((m, n))
            u = rng.random(m)
            if not _paths.confine_chunk(x, logw, z, u, dt, y, ess_threshold, diag):
                raise UnreliableEstimateError("all particles died; increase n_paths")
            done += m
        log_p.append(diag[0] + logsumexp(logw) - math.log(n))
        ess_min = min(ess_min, diag[1])
    value, stderr, per = _combine(log_p, t)
    return {"value": value, "stderr": stderr, "exact_limit": -math.pi ** 2 / (8 * y * y),
            "finite_t_prediction": -math.pi ** 2 / (8 * y * y) + math.log(4 / math.pi) / t,
            "ess_min": float(ess_min), "t": t, "dt": dt, "n_paths": n * batches,
            "batch_values": per}


def local_time_rate(y, c, t, n_paths, dt, seed, batches=MIN_BATCHES, import_drift=None):
    """``J_y(c) = lim (1/t) log E_0[exp(c l(t))]`` for BM reflected on ``[0, y]``.

    ``l`` is the local time at 0 generated by the folding scheme itself, so
    that ``l``, the reflected path and the Brownian increments obey the
    Tanaka identity step by step. Paths are drawn with drift ``-c`` towards 0
    (``import_drift``) and reweighted by ``exp(c B^Q_t - c^2 t/2)``.
    ``exact`` in the result is the principal eigenvalue ``k^2/2`` with
    ``k tanh(k y) = c``; the finite-``t`` value exceeds it by about
    ``log(2)/t`` when ``y`` is large.
    """
    y = check_positive(y, "y")
    c = check_positive(c, "c", allow_zero=True)
    n_steps = _step_count(t, dt)
    n = _split(n_paths, batches)
    drift = -c if import_drift is None else import_drift
    exact = 0.5 * _robin_root(c, y) ** 2
    if c == 0:
        return {"value": 0.0, "stderr": 0.0, "limit": 0.0, "exact": 0.0, "t": t, "dt": dt}
    chunk = max(1, MAX_CHUNK // n)
    log_z = []
    for b in range(batches):
        rng = child_generator(seed, "local_time", b)
        r = np.zeros(n)
        ell = np.zeros(n)
        bq = np.zeros(n)
        done = 0
        while done < n_steps:
            m = min(chunk, n_steps - done)
            z = rng.standard_normal((m, n))
            _paths.reflected_chunk(r, ell, bq, z, dt, y, drift)
            done += m
        # density of the driftless law with respect to the drift-(drift) law
        logw = c * ell - drift * bq - 0.5 * drift * drift * t
        log_z.append(logsumexp(logw) - math.log(n))
    value, stderr, per = _combine(log_z, t)
    return {"value": value, "stderr": stderr, "limit": 0.5 * c * c, "exact": exact,
            "t": t, "dt": dt, "n_paths": n * batches, "batch_values": per}


def _robin_root(c, y):
    """Root ``k > 0`` of ``k tanh(k y) = c``."""
    if c == 0:
        return 0.0
    return float(brentq(lambda k: k * math.tanh(k * y) - c, 1e-12, 2.0 * c + 1.0 / y))


def chebyshev_check(field, policy, theta, b, t, dt, n_paths, seed, slack=0.1):
    """Empirical ``P(int (theta + alpha) dB <= -b t)`` versus ``exp(-b^2 t / (2 (|theta| + c)^2))``."""
    pb = simulate_paths(field, policy, t, dt, n_paths, seed)
    stoch = theta * pb.brownian + pb.alpha_db
    emp = float(np.mean(stoch <= -b * t))
    bound = math.exp(-b * b * t / (2.0 * (abs(theta) + policy.c) ** 2))
    n = pb.brownian.size
    se = math.sqrt(max(emp * (1 - emp), 1.0 / n) / n)
    return {"empirical": emp, "bound": bound, "stderr": se,
            "passed": emp <= bound * (1 + slack) + 3 * se}
