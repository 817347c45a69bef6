"""Effective Hamiltonian of the controlled problem, assembled from Lambda.

With ``Lambda = Lambda_beta`` the tilted free energy:

* weak control (``Lambda(0) >= c^2/2``):
  ``H(theta) = Lambda(0) - c^2/2`` for ``|theta| < c`` and
  ``Lambda(|theta| - c) - c^2/2`` otherwise;
* strong control: ``H = 0`` for ``|theta| < theta_bar`` and the same shifted
  formula beyond, where ``theta_bar`` in ``(0, c)`` solves
  ``Lambda(theta_bar - c) = c^2/2``.

``Lambda(0) = beta`` for every field whose supremum is 1.
"""

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import BracketError, ConfigurationError, check_positive, check_theta
from .corrector import DEFAULT_MAX_BUFFER, DEFAULT_MIN_WINDOW, TiltedFreeEnergy

WEAK = "weak"
STRONG = "strong"


def classify_regime(beta, c, sup_level=1.0):
    """``weak`` iff ``beta * sup_level >= c^2 / 2`` (the boundary is weak)."""
    beta = check_positive(beta, "beta")
    c = check_positive(c, "c", allow_zero=True)
    return WEAK if beta * sup_level >= 0.5 * c * c else STRONG


def _theta_bar(lam_fn, c, tol, eps=None):
    """Bisection for ``lam_fn(c - t) = c^2/2`` on ``[eps, c - eps]``."""
    eps = 1e-9 * c if eps is None else eps
    target = 0.5 * c * c

    def g(t):
        return lam_fn(c - t) - target

    lo, hi = eps, c - eps
    g_lo, g_hi = g(lo), g(hi)
    if not (g_lo > 0 > g_hi):
        raise BracketError(
            f"theta_bar not bracketed: g({lo:g})={g_lo:g}, g({hi:g})={g_hi:g}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def theta_bar_band(lam_fn, c, theta_bar, tol_lambda, h=1e-4):
    """Interval of ``t`` whose residual ``|Lambda(t - c) - c^2/2|`` is within ``tol_lambda``.

    Linearized through a central-difference slope of Lambda at ``c - theta_bar``.
    """
    q = c - theta_bar
    h = min(h, 0.5 * theta_bar, 0.5 * q)
    slope = (lam_fn(q + h) - lam_fn(q - h)) / (2 * h)
    if slope <= 0:
        return (0.0, c)
    half = tol_lambda / slope
    return (max(theta_bar - half, 0.0), min(theta_bar + half, c))


def find_theta_bar(field, beta, c, tol=1e-10, window=None, **kwargs):
    """``theta_bar(beta, c)`` for a strong-regime pair."""
    beta = check_positive(beta, "beta")
    c = check_positive(c, "c")
    if classify_regime(beta, c, field.sup_level) == WEAK:
        raise ConfigurationError("theta_bar is only defined in the strong regime")
    tfe = TiltedFreeEnergy(beta=beta, window=window, **kwargs).fit(field)
    return _theta_bar(lambda q: float(tfe.predict(q)[0]), c, tol)


class EffectiveHamiltonian(BaseEstimator):
    """Piecewise evaluator for the effective Hamiltonian on one environment.

    Parameters
    ----------
    beta, c : float
        Potential magnitude and control bound.
    window : tuple or None
        Averaging window for the free energy.
    tol_root : float
        Root tolerance on lambda.
    tol_theta_bar : float
        Bisection tolerance on ``theta_bar``.
    tol_lambda : float
        Accuracy attributed to Lambda; sets the reported ``theta_bar`` band.

    Attributes
    ----------
    regime_ : str
    theta_bar_ : float or None
    theta_bar_interval_ : tuple or None
    flat_value_ : float
    free_energy_ : TiltedFreeEnergy
        Shared, thread-safe Lambda cache keyed by ``|q|``.
    """

    def __init__(self, beta=1.0, c=1.0, window=None, tol_root=1e-8, tol_theta_bar=1e-10,
                 tol_lambda=1e-4, max_buffer=DEFAULT_MAX_BUFFER,
                 min_window=DEFAULT_MIN_WINDOW):
        self.beta = beta
        self.c = c
        self.window = window
        self.tol_root = tol_root
        self.tol_theta_bar = tol_theta_bar
        self.tol_lambda = tol_lambda
        self.max_buffer = max_buffer
        self.min_window = min_window

    def fit(self, field, y=None):
        beta = check_positive(self.beta, "beta")
        c = check_positive(self.c, "c", allow_zero=True)
        self.field_ = field
        self.free_energy_ = TiltedFreeEnergy(
            beta=beta, window=self.window, tol_root=self.tol_root,
            max_buffer=self.max_buffer, min_window=self.min_window).fit(field)
        self.lambda0_ = beta * field.sup_level
        self.regime_ = classify_regime(beta, c, field.sup_level)
        if self.regime_ == WEAK:
            self.theta_bar_ = None
            self.theta_bar_interval_ = None
            self.flat_value_ = self.lambda0_ - 0.5 * c * c
            self.plateau_half_width_ = c
        else:
            self.theta_bar_ = _theta_bar(self.Lambda, c, self.tol_theta_bar)
            self.theta_bar_interval_ = theta_bar_band(self.Lambda, c, self.theta_bar_,
                                                      self.tol_lambda)
            self.flat_value_ = 0.0
            self.plateau_half_width_ = self.theta_bar_
        return self

    def Lambda(self, q):
        """Tilted free energy at a scalar slope."""
        check_is_fitted(self, "free_energy_")
        return float(self.free_energy_.predict(q)[0])

    def _value(self, theta):
        a = abs(float(theta))
        if a < self.plateau_half_width_:
            return self.flat_value_
        return self.Lambda(a - self.c) - 0.5 * self.c * self.c

    def predict(self, theta):
        check_is_fitted(self, "regime_")
        return np.array([self._value(t) for t in check_theta(theta)])

    def upper_bound(self, theta):
        """``min(Lambda(theta - c), Lambda(theta + c)) - c^2/2`` (constant bang-bang policies)."""
        c = self.c
        return np.array([min(self.Lambda(t - c), self.Lambda(t + c)) - 0.5 * c * c
                         for t in check_theta(theta)])

    def lower_bound(self):
        """``Lambda(0) - c^2/2``, the uniform lower bound."""
        return self.lambda0_ - 0.5 * self.c * self.c

    def summary(self):
        check_is_fitted(self, "regime_")
        return {
            "beta": self.beta,
            "c": self.c,
            "regime": self.regime_,
            "theta_bar": self.theta_bar_,
            "theta_bar_interval": (None if self.theta_bar_interval_ is None
                                   else list(self.theta_bar_interval_)),
            "flat_value": self.flat_value_,
            "plateau_half_width": self.plateau_half_width_,
        }


def build(field, beta, c, theta_grid=None, **kwargs):
    """Fit an :class:`EffectiveHamiltonian`; also tabulate it on ``theta_grid`` if given."""
    H = EffectiveHamiltonian(beta=beta, c=c, **kwargs).fit(field)
    if theta_grid is not None:
        H.grid_ = check_theta(theta_grid)
        H.curve_ = H.predict(H.grid_)
    return H


def _convexity_violations(grid, values, tol_cvx):
    """Three-point tests ``H(t_i) <= chord of neighbours + tol`` on a sorted grid."""
    out = []
    for i in range(1, len(grid) - 1):
        a, m, b = grid[i - 1], grid[i], grid[i + 1]
        w = (m - a) / (b - a)
        chord = (1 - w) * values[i - 1] + w * values[i + 1]
        tol = tol_cvx * (1.0 + abs(values[i]))
        if values[i] > chord + tol:
            out.append({"theta": float(m), "excess": float(values[i] - chord)})
    return out


def check_bound_structure(H, theta_grid, tol=1e-6, tol_cvx=1e-6):
    """Check the bound and shape structure of a fitted Hamiltonian on a grid.

    Returns a dict with one entry per check: ``passed``, the worst ``slack``
    (positive means satisfied with room) and the offending slopes.
    """
    grid = np.sort(check_theta(theta_grid))
    c = H.c
    vals = H.predict(grid)
    ub = H.upper_bound(grid)
    lb = H.lower_bound()
    plus = max(lb, 0.0)
    edge = H.plateau_half_width_
    report = {}

    def record(name, slacks, mask=None):
        slacks = np.asarray(slacks, dtype=float)
        if mask is not None:
            sub_grid, slacks = grid[mask], slacks[mask]
        else:
            sub_grid = grid
        if slacks.size == 0:
            report[name] = {"passed": True, "slack": None, "violations": []}
            return
        bad = sub_grid[slacks < 0]
        report[name] = {"passed": bool(bad.size == 0), "slack": float(slacks.min()),
                        "violations": [float(t) for t in bad]}

    record("upper_bound_constant_policies", ub + tol - vals)
    record("uniform_lower_bound", vals - (lb - tol))
    record("plateau_upper_bound", plus + tol - vals, np.abs(grid) <= c)
    outer = np.abs(grid) >= edge
    record("upper_bound_attained", tol - np.abs(vals - ub), outer)
    viol = _convexity_violations(grid, vals, tol_cvx)
    convex = not viol
    expected = H.regime_ == WEAK
    report["convexity"] = {"passed": convex == expected, "convex": convex,
                           "expected_convex": expected, "violations": viol}
    dashed = 0.5 * grid ** 2 - c * np.abs(grid)
    lam = np.array([H.Lambda(t) for t in grid])
    record("dominance", np.minimum(vals - dashed + tol, lam + tol - vals))
    record("evenness", -np.abs(vals - H.predict(-grid)))
    if H.regime_ == STRONG:
        j = H.theta_bar_
        gap = abs(H.Lambda(j - c) - 0.5 * c * c)
    else:
        gap = abs(H.Lambda(0.0) - 0.5 * c * c - H.flat_value_)
    report["junction_continuity"] = {"passed": gap <= max(tol, H.tol_lambda), "gap": gap}
    report["plateau_value"] = {
        "passed": H.flat_value_ == (0.0 if H.regime_ == STRONG else lb),
        "value": H.flat_value_}
    report["all_passed"] = all(v["passed"] for v in report.values() if isinstance(v, dict))
    return report


def closed_form_constant(level, beta, c, theta):
    """Effective Hamiltonian for a constant potential (``Lambda = beta level + q^2/2``)."""
    theta = np.abs(np.asarray(theta, dtype=float))
    lam0 = beta * level
    if lam0 >= 0.5 * c * c:
        return np.where(theta < c, lam0 - 0.5 * c * c, lam0 + 0.5 * (theta - c) ** 2 - 0.5 * c * c)
    tb = c - math.sqrt(c * c - 2 * lam0)
    return np.where(theta < tb, 0.0, lam0 + 0.5 * (theta - c) ** 2 - 0.5 * c * c)
