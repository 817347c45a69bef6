import math

import numpy as np
import pytest

from hjhomog._validation import ConfigurationError, WindowError
from hjhomog.corrector import corrector_at_root, tilted_free_energy
from hjhomog.environment import generate_constant
from hjhomog.montecarlo import (
    Policy,
    chebyshev_check,
    child_generator,
    confinement_rate,
    estimate_functional,
    hitting_functional_mc,
    hitting_laplace,
    hitting_laplace_mc,
    local_time_rate,
    martingale_audit,
    policy_upper_bounds,
    simulate_paths,
)


def test_policy_drifts():
    assert Policy.zero().drift_at([1.0, -1.0]).tolist() == [0.0, 0.0]
    assert Policy.const_left(2.0).drift_at(3.0) == -2.0
    assert Policy.const_right(2.0).drift_at(-3.0) == 2.0
    trap = Policy.valley_trap(1.0, 0.5)
    assert trap.drift_at([2.0, 0.0, 1.0]).tolist() == [-0.5, 0.5, -0.5]
    assert Policy.tilt(-3.0).speed == 3.0
    with pytest.raises(ConfigurationError):
        Policy("Sideways")


def test_child_generators_are_independent_and_reproducible():
    a = child_generator(1, "paths", 0).standard_normal(4)
    b = child_generator(1, "paths", 0).standard_normal(4)
    c = child_generator(1, "paths", 1).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_constant_field_estimate_is_exact(constant_field):
    est = estimate_functional(constant_field, Policy.zero(), 1.0, 1.5, 5.0, 0.01, 1600, 3)
    assert est.value == pytest.approx(1.0 + 0.5 * 1.5 ** 2, abs=1e-9)
    assert est.batches == 16 and len(est.batch_values) == 16
    assert est.tilt_used == 1.5


def test_estimate_reproducible(poisson_field):
    kw = dict(t=2.0, dt=0.01, n_paths=320, seed=11)
    a = estimate_functional(poisson_field, Policy.const_left(1.0), 1.0, 0.5, **kw)
    b = estimate_functional(poisson_field, Policy.const_left(1.0), 1.0, 0.5, **kw)
    assert a.to_dict() == b.to_dict()
    assert a.resamples >= 0 and 0 < a.ess_min <= 1


def test_estimate_batch_and_tilt_validation(constant_field):
    with pytest.raises(ConfigurationError):
        estimate_functional(constant_field, Policy.zero(), 1.0, 0.0, 1.0, 0.01, 100, 0,
                            batches=8)
    with pytest.raises(ConfigurationError):
        estimate_functional(constant_field, Policy.zero(), 1.0, 0.0, 1.0, 0.01, 160, 0,
                            tilt=20.0)


def test_window_too_small():
    small = generate_constant(1.0, (-10.0, 10.0), 0.05)
    with pytest.raises(WindowError):
        estimate_functional(small, Policy.zero(), 1.0, 0.0, 20.0, 0.01, 160, 0)


def test_simulate_paths_shapes(constant_field):
    pb = simulate_paths(constant_field, Policy.const_right(1.0), 1.0, 0.01, 160, 5,
                        record_times=[0.5, 1.0])
    assert pb.positions.shape == (2, 160)
    assert np.allclose(pb.int_v, 1.0)
    # X_1 = t + B_1 under the right-moving policy
    assert np.allclose(pb.positions[-1], 1.0 + pb.brownian)


def test_policy_upper_bounds_constant(constant_field):
    rep = policy_upper_bounds(constant_field, 1.0, 2.0, 3.0, 4.0, 0.01, 320, 0)
    # a constant drift -c gives exactly Lambda(theta - c) - c^2/2 on a constant field
    vals = {k: v["value"] for k, v in rep["policies"].items()}
    assert vals["ConstLeft"] == pytest.approx(1.0 + 0.5 * 1.0 ** 2 - 2.0, abs=1e-9)
    assert rep["minimum"]["policy"] == "ConstLeft"
    zero = policy_upper_bounds(constant_field, 1.0, 0.0, 1.0, 2.0, 0.01, 160, 0)
    assert zero["minimum"]["policy"] == "Zero"


def test_martingale_audit_constant(constant_field):
    res = tilted_free_energy(constant_field, 1.0, 2.0)
    prof = corrector_at_root(constant_field, res, (-60.0, 60.0))
    ctl = corrector_at_root(constant_field, tilted_free_energy(constant_field, 1.0, 1.0),
                            (-60.0, 60.0))
    rep = martingale_audit(constant_field, 1.0, 2.0, prof, [0.5, 1.0], 320, 1, dt=0.01, c=1.0,
                           controlled_corrector=ctl)
    assert all(r["passed"] for r in rep["uncontrolled"])
    for rows in rep["controlled"].values():
        assert all(r["passed"] for r in rows)


def test_hitting_laplace_mc():
    out = hitting_laplace_mc(0.5, 0.0, 1.0, dt=1e-3, n_paths=1600, seed=2, t_max=20.0)
    assert out["exact"] == pytest.approx(hitting_laplace(0.5, 0.0, 1.0))
    # Euler monitoring overshoots the hitting time, so allow a small bias
    assert abs(out["estimate"] - out["exact"]) <= 4 * out["stderr"] + 0.03


def test_hitting_functional_matches_closed_form(constant_field):
    out = hitting_functional_mc(constant_field, 1.0, 1.5, 0.0, 1.0, n_paths=1600, seed=4,
                                t_max=20.0)
    exact = math.sqrt(2 * 0.5)
    assert abs(out["neg_log"] - exact) <= 4 * out["neg_log_stderr"] + 0.05


def test_confinement_small():
    out = confinement_rate(1.0, 8.0, 1600, 3, dt=1e-3)
    assert out["value"] == pytest.approx(out["finite_t_prediction"], abs=0.05)
    with pytest.raises(ConfigurationError):
        confinement_rate(1.0, 2.0, 1600, 3)


def test_local_time_small():
    out = local_time_rate(2.0, 1.0, 16.0, 1600, 1e-3, 5)
    assert out["exact"] > out["limit"]
    assert out["value"] == pytest.approx(out["exact"] + math.log(2) / 16.0, abs=0.05)
    assert local_time_rate(2.0, 0.0, 1.0, 160, 0.01, 5)["value"] == 0.0


def test_chebyshev(constant_field):
    out = chebyshev_check(constant_field, Policy.const_left(1.0), 1.0, 0.5, 4.0, 0.01, 1600, 9)
    assert out["passed"]
