"""Input validation helpers shared by the estimators and solvers."""

import math
import numbers

import numpy as np
from sklearn.utils import check_array


class HomogenizationError(Exception):
    """Base class for numerical failures raised by this package."""


class ConfigurationError(HomogenizationError, ValueError):
    """Invalid parameters or inconsistent configuration."""


class WindowError(HomogenizationError):
    """A query or a simulated path left the materialized window."""


class RiccatiBandError(HomogenizationError):
    """The Riccati solution left the admissible gradient band."""


class BracketError(HomogenizationError):
    """A root search could not bracket its root."""


class UnreliableEstimateError(HomogenizationError):
    """A Monte Carlo estimate collapsed (ESS, zero survivors, NaN)."""


class SchemeError(HomogenizationError):
    """CFL violation or gradient blow-up in a finite-difference solve."""


def check_positive(value, name, allow_zero=False):
    if not isinstance(value, numbers.Real) or not math.isfinite(value):
        raise ConfigurationError(f"{name} must be a finite real, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ConfigurationError(f"{name} must be {bound}, got {value!r}")
    return float(value)


def check_unit_interval(value, name, open_=False):
    value = float(value)
    if open_:
        ok = 0.0 < value < 1.0
    else:
        ok = 0.0 <= value <= 1.0
    if not ok:
        interval = "(0, 1)" if open_ else "[0, 1]"
        raise ConfigurationError(f"{name} must lie in {interval}, got {value!r}")
    return value


def check_window(window, name="window"):
    try:
        lo, hi = (float(w) for w in window)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{name} must be a pair (lo, hi)") from exc
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        raise ConfigurationError(f"{name} must satisfy lo < hi, got {window!r}")
    return lo, hi


def check_theta(theta, name="theta"):
    """Return ``theta`` as a 1-d float array, validated to be finite."""
    arr = check_array(np.atleast_1d(np.asarray(theta, dtype=float)), ensure_2d=False,
                      dtype=np.float64, input_name=name)
    return arr


def check_sorted(grid, name="theta_grid"):
    arr = check_theta(grid, name)
    if np.any(np.diff(arr) < 0):
        raise ConfigurationError(f"{name} must be sorted ascending")
    return arr
