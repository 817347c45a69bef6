import numpy as np
import pytest

from hjhomog._validation import SchemeError, WindowError
from hjhomog.effective import build
from hjhomog.environment import generate_constant
from hjhomog.pde import (
    homogenization_sweep,
    run_radius,
    solve_effective,
    solve_hopf_cole,
    solve_viscous,
    tabulate_effective,
)


@pytest.mark.parametrize("theta,c", [(0.0, 1.0), (1.5, 1.0), (-2.0, 0.5)])
def test_linear_data_on_constant_field_is_exact(constant_field, theta, c):
    res = solve_viscous(constant_field, 1.0, c, 0.25, theta, T=0.5)
    exact = 0.5 * (1.0 + 0.5 * theta ** 2 - c * abs(theta))
    assert res.probe == pytest.approx(exact, abs=1e-10)
    assert res.cfl_ratio <= 1.0
    assert res.dx == pytest.approx(0.25 / 8)


def test_callable_initial_data(constant_field):
    f = np.cos
    res = solve_viscous(constant_field, 1.0, 1.0, 0.25, f, T=0.2, record_times=[0.1])
    assert sorted(res.snapshots) == [0.1, 0.2]
    assert np.isnan(res.theta)
    assert np.isfinite(res.probe)


def test_monotone_scheme_keeps_order(periodic_field):
    lo = solve_viscous(periodic_field, 1.0, 1.0, 0.25, lambda x: np.sin(x), T=0.3)
    hi = solve_viscous(periodic_field, 1.0, 1.0, 0.25, lambda x: np.sin(x) + 0.1, T=0.3)
    diff = hi.u_final - lo.u_final
    assert diff.min() >= 0.1 - 1e-9


def test_dt_above_bound_raises(constant_field):
    with pytest.raises(SchemeError):
        solve_viscous(constant_field, 1.0, 1.0, 0.25, 1.0, dt=0.1)


def test_window_too_small_raises():
    small = generate_constant(1.0, (-5.0, 5.0), 0.05)
    with pytest.raises(WindowError):
        solve_viscous(small, 1.0, 1.0, 0.25, 1.0)


def test_hopf_cole_agrees_with_explicit_scheme(periodic_field):
    explicit = solve_viscous(periodic_field, 1.0, 0.0, 0.25, 1.0, T=0.5).probe
    hc = solve_hopf_cole(periodic_field, 1.0, 0.25, 1.0, T=0.5)
    assert explicit == pytest.approx(hc, abs=5e-3)


def test_effective_solver_linear_data(constant_field):
    H = build(constant_field, 1.0, 1.0)
    res = solve_effective(H, 2.0, T=0.5)
    assert res.probe == pytest.approx(0.5 * H.predict(2.0)[0], abs=1e-10)
    p, h = tabulate_effective(H, 3.0, n=101, extra=(2.0,))
    assert np.min(np.abs(p - 2.0)) < 1e-12


def test_sweep_structure(constant_field):
    out = homogenization_sweep(constant_field, 1.0, 1.0, [2.0], [0.5, 0.25], T=0.5,
                               dx_factor=4)
    assert len(out["rows"]) == 2
    assert out["rows"][1]["dx"] == pytest.approx(0.25 / 4)
    (s,) = out["summary"]
    # linear data on a constant field reproduces T * Hbar up to the root tolerance
    assert max(s["errors"]) < 1e-7
    assert out["regime"] == "weak"


def test_run_radius_grows_with_horizon():
    assert run_radius(1.0, 2.0, 1.0, 1.0, 1.0) > run_radius(1.0, 1.0, 1.0, 1.0, 1.0)


def test_snapshot_roundtrip(constant_field, tmp_path):
    res = solve_viscous(constant_field, 1.0, 1.0, 0.5, 1.0, T=0.1)
    path = tmp_path / "snap.txt"
    res.write_snapshot(path)
    data = np.loadtxt(path, skiprows=1)
    assert np.array_equal(data[:, 0], res.x)
    assert np.array_equal(data[:, 1], res.u_final)
