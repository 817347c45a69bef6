import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from hjhomog._validation import ConfigurationError, RiccatiBandError, WindowError
from hjhomog.corrector import (
    TiltedFreeEnergy,
    corrector_at_root,
    find_lambda_o,
    flat_interval,
    free_energy_curve,
    martingale_weights,
    neg_log_v,
    solve_riccati,
    tilted_free_energy,
)
from hjhomog.environment import generate_constant


@pytest.mark.parametrize("level,beta,theta", [(1.0, 1.0, 1.0), (0.3, 2.0, 0.5),
                                              (0.0, 0.5, 2.0)])
def test_constant_closed_form(level, beta, theta):
    f = generate_constant(level, (-300.0, 300.0), 0.05)
    res = tilted_free_energy(f, beta, theta)
    assert not res.flat
    assert res.Lambda == pytest.approx(beta * level + 0.5 * theta ** 2, abs=1e-7)
    assert res.monotone


def test_constant_hitting_functional_exact():
    f = generate_constant(1.0, (-100.0, 100.0), 0.05)
    lam = 3.0
    val = neg_log_v(f, 1.0, lam, -1.0, 1.0)
    assert val == pytest.approx(2.0 * math.sqrt(2.0 * (lam - 1.0)), abs=1e-12)
    assert neg_log_v(f, 1.0, lam, 1.0, -1.0) == pytest.approx(val, abs=1e-12)
    assert neg_log_v(f, 1.0, lam, 0.5, 0.5) == 0.0


def test_theta_zero_is_floor(poisson_field):
    res = tilted_free_energy(poisson_field, 1.5, 0.0)
    assert res.flat and res.Lambda == 1.5


def test_lambda_below_floor_rejected(poisson_field):
    with pytest.raises(ConfigurationError):
        solve_riccati(poisson_field, 1.0, 1.0, 0.5, (-10.0, 10.0))
    with pytest.raises(ConfigurationError):
        neg_log_v(poisson_field, 1.0, 0.9, 0.0, 1.0)


def test_short_window_rejected_on_random_field(poisson_field):
    with pytest.raises(ConfigurationError):
        find_lambda_o(poisson_field, 1.0, 2.0, window=(-50.0, 50.0))


def test_evenness_is_exact(poisson_field):
    a = tilted_free_energy(poisson_field, 1.0, 1.7)
    b = tilted_free_energy(poisson_field, 1.0, -1.7)
    assert a.Lambda == b.Lambda


def test_bounds_and_convexity(poisson_field):
    grid = np.linspace(-3, 3, 13)
    res, flat = free_energy_curve(poisson_field, 1.0, grid)
    lam = np.array([r.Lambda for r in res])
    assert np.all(lam >= np.maximum(1.0, 0.5 * grid ** 2) - 1e-6)
    assert np.all(lam <= 1.0 + 0.5 * grid ** 2 + 1e-6)
    assert np.all(0.5 * (lam[:-2] + lam[2:]) - lam[1:-1] >= -1e-4)
    assert flat is not None and flat[0] == -flat[1] and flat[1] > 0


def test_flat_interval_helper():
    class R:
        def __init__(self, theta, flat):
            self.theta, self.flat = theta, flat
    rs = [R(t, abs(t) <= 0.5) for t in (-1.0, -0.5, 0.0, 0.5, 1.0)]
    assert flat_interval(rs) == (-0.5, 0.5)
    assert flat_interval([R(0.5, False)]) is None


def test_profile_band_and_residual(periodic_field):
    res = tilted_free_energy(periodic_field, 1.0, 2.0)
    prof = corrector_at_root(periodic_field, res, (-100.0, 100.0))
    assert prof.band_excess <= 0.0
    assert prof.ode_residual < 1e-2
    assert prof.F(0.0) == 0.0
    # periodic field: the corrector gradient is periodic
    x = np.linspace(-10, 10, 201)
    assert np.abs(prof.gradient(x) - prof.gradient(x + 2.0)).max() < 1e-6
    with pytest.raises(WindowError):
        prof.F(500.0)


def test_band_violation_raises(periodic_field):
    res = tilted_free_energy(periodic_field, 1.0, 2.0)
    with pytest.raises(RiccatiBandError):
        solve_riccati(periodic_field, 1.0, 2.0, res.lambda_o, (-20.0, 20.0), tol_u=-0.5)


def test_negative_branch_mirrors(periodic_field):
    res = tilted_free_energy(periodic_field, 1.0, 2.0)
    pos = solve_riccati(periodic_field, 1.0, 2.0, res.lambda_o, (-50.0, 50.0))
    neg = solve_riccati(periodic_field, 1.0, -2.0, res.lambda_o, (-50.0, 50.0))
    # V is even, so u_-(x) = -u_+(-x)
    assert np.allclose(neg.u_values, -pos.u_values[::-1], atol=1e-8)


def test_martingale_weight_on_constant_field():
    f = generate_constant(1.0, (-100.0, 100.0), 0.05)
    res = tilted_free_energy(f, 1.0, 1.0)
    prof = corrector_at_root(f, res, (-50.0, 50.0))
    times = np.linspace(0, 1, 11)
    rng = np.random.default_rng(0)
    pos = np.concatenate([[0.0], np.cumsum(rng.normal(0, 0.3, 10))])
    # F is linear-free on constant fields, so M_t = exp(beta t + theta X_t - lam t)
    m = martingale_weights(prof, times, pos, 1.0, 1.0, f)
    assert m == pytest.approx(math.exp(1.0 + pos[-1] - res.lambda_o), rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-100, 100), y=st.floats(-100, 100), z=st.floats(-100, 100),
       gap=st.floats(1e-3, 3.0))
def test_sandwich_and_additivity_property(poisson_field, x, y, z, gap):
    x, y, z = sorted((x, y, z))
    lam = 1.0 + gap
    xz = neg_log_v(poisson_field, 1.0, lam, x, z)
    xy = neg_log_v(poisson_field, 1.0, lam, x, y)
    yz = neg_log_v(poisson_field, 1.0, lam, y, z)
    d = z - x
    assert math.sqrt(2 * gap) * d - 1e-4 <= xz <= math.sqrt(2 * lam) * d + 1e-4
    assert abs(xz - xy - yz) <= 1e-4


def test_estimator_api(poisson_field):
    est = TiltedFreeEnergy(beta=1.0, tol_root=1e-8)
    params = est.get_params()
    assert params["beta"] == 1.0 and params["tol_root"] == 1e-8
    twin = clone(est)
    assert twin.get_params() == params
    est.fit(poisson_field)
    out = est.predict([-2.0, 0.0, 2.0])
    assert out.shape == (3,) and out[0] == out[2] and out[1] == 1.0
    assert 2.0 in est.cache_
    assert est.flat_piece(np.linspace(-1, 1, 5)) is not None
