import math

import numpy as np
import pytest
from sklearn.base import clone

from hjhomog._validation import ConfigurationError
from hjhomog.effective import (
    STRONG,
    WEAK,
    EffectiveHamiltonian,
    build,
    check_bound_structure,
    classify_regime,
    closed_form_constant,
    find_theta_bar,
)


def test_classify_regime_boundary():
    assert classify_regime(1.0, 1.0) == WEAK
    assert classify_regime(0.5, 1.0) == WEAK
    assert classify_regime(0.49, 1.0) == STRONG
    assert classify_regime(1.0, 2.0) == STRONG
    assert classify_regime(1.0, 0.0) == WEAK


@pytest.mark.parametrize("beta,c", [(1.0, 1.0), (1.0, 2.0), (2.0, 1.5)])
def test_constant_closed_form(constant_field, beta, c):
    H = build(constant_field, beta, c)
    grid = np.linspace(-4, 4, 41)
    assert np.abs(H.predict(grid) - closed_form_constant(1.0, beta, c, grid)).max() < 1e-7


def test_theta_bar_constant(constant_field):
    tb = find_theta_bar(constant_field, 1.0, 2.0)
    assert tb == pytest.approx(2.0 - math.sqrt(2.0), abs=1e-8)
    with pytest.raises(ConfigurationError):
        find_theta_bar(constant_field, 1.0, 1.0)


def test_structure_checks_random(poisson_field):
    for beta, c in ((1.0, 1.0), (1.0, 2.0)):
        H = build(poisson_field, beta, c)
        rep = check_bound_structure(H, np.linspace(-4, 4, 41), tol=1e-4, tol_cvx=1e-4)
        assert rep["all_passed"], {k: v for k, v in rep.items()
                                   if isinstance(v, dict) and not v["passed"]}
        assert rep["convexity"]["convex"] == (beta >= 0.5 * c * c)


def test_plateau_values(poisson_field):
    weak = build(poisson_field, 1.0, 1.0)
    strong = build(poisson_field, 1.0, 2.0)
    assert weak.flat_value_ == 0.5 and weak.theta_bar_ is None
    assert strong.flat_value_ == 0.0
    assert 0.0 < strong.theta_bar_ < 2.0
    lo, hi = strong.theta_bar_interval_
    assert lo <= strong.theta_bar_ <= hi
    assert np.all(strong.predict([-0.9 * strong.theta_bar_, 0.0]) == 0.0)


def test_c_zero_reduces_to_lambda(poisson_field):
    H = build(poisson_field, 1.0, 0.0)
    grid = np.linspace(-3, 3, 13)
    lam = np.array([H.Lambda(t) for t in grid])
    assert np.array_equal(H.predict(grid), lam)


def test_estimator_api(constant_field):
    H = EffectiveHamiltonian(beta=1.0, c=2.0)
    assert clone(H).get_params() == H.get_params()
    with pytest.raises(Exception):
        H.predict([0.0])
    H.fit(constant_field)
    s = H.summary()
    assert s["regime"] == STRONG and s["flat_value"] == 0.0
    assert H.upper_bound([3.0])[0] == pytest.approx(H.predict([3.0])[0], abs=1e-9)
    assert H.lower_bound() == -1.0
