import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjhomog._validation import ConfigurationError, WindowError
from hjhomog.environment import (
    KernelSpec,
    PotentialField,
    audit_assumptions,
    find_features,
    from_samples,
    generate_constant,
    generate_mollified,
    generate_periodic,
    lowest_valley,
    regenerate,
)


def test_kernel_normalized():
    for shape in ("cos2", "biweight"):
        spec = KernelSpec(radius=1.5, shape=shape)
        assert spec.integral() == pytest.approx(1.0, abs=1e-10)
        spec.validate()


def test_kernel_rejects_bad_mass_and_shape():
    with pytest.raises(ConfigurationError):
        KernelSpec(mass=1.1).validate()
    with pytest.raises(ConfigurationError):
        KernelSpec(shape="box")


@pytest.mark.parametrize("process,scale", [("poisson", 1.0), ("poisson", 3.0),
                                           ("wiener", 1.0)])
def test_mollified_range_and_derivative(process, scale):
    f = generate_mollified(3, process, scale, KernelSpec(), (-40.0, 40.0), 0.05)
    assert f.values.min() >= 0.0 and f.values.max() <= 1.0
    fd = (f.values[2:] - f.values[:-2]) / 0.1
    assert np.abs(fd - f.derivative_values[1:-1]).max() < 0.05
    # |V'| <= sup f for [0, 1]-valued convolutions
    assert np.abs(f.derivative_values).max() <= KernelSpec().max_pdf + 1e-9


def test_window_consistency_is_bit_exact(poisson_field):
    sub = regenerate(poisson_field, (-20.0, 35.0))
    i0 = sub.n0 - poisson_field.n0
    assert np.array_equal(poisson_field.values[i0:i0 + sub.n], sub.values)
    assert np.array_equal(poisson_field.derivative_values[i0:i0 + sub.n],
                          sub.derivative_values)


def test_same_seed_same_field_different_seed_differs():
    a = generate_mollified(11, "poisson", 1.0, KernelSpec(), (-20.0, 20.0), 0.05)
    b = generate_mollified(11, "poisson", 1.0, KernelSpec(), (-20.0, 20.0), 0.05)
    c = generate_mollified(12, "poisson", 1.0, KernelSpec(), (-20.0, 20.0), 0.05)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_serialization_roundtrip(tmp_path, poisson_field):
    path = tmp_path / "f.json"
    poisson_field.save(path)
    back = PotentialField.load(path)
    assert np.array_equal(back.values, poisson_field.values)
    assert np.array_equal(back.derivative_values, poisson_field.derivative_values)
    assert back.kind == poisson_field.kind and back.seed == poisson_field.seed
    assert back.window == poisson_field.window
    assert regenerate(back, (-5.0, 5.0)).values.tolist() == \
        regenerate(poisson_field, (-5.0, 5.0)).values.tolist()


def test_serialization_rejects_other_versions(poisson_field):
    data = poisson_field.to_dict()
    data["version"] = 99
    with pytest.raises(ConfigurationError):
        PotentialField.from_dict(data)


def test_arrays_read_only(periodic_field):
    with pytest.raises(ValueError):
        periodic_field.values[0] = 0.5


def test_evaluate_hits_nodes_and_rejects_outside(periodic_field):
    x = periodic_field.nodes[100:110]
    v, d = periodic_field.evaluate(x)
    assert np.allclose(v, periodic_field.values[100:110], atol=1e-15)
    assert np.allclose(d, periodic_field.derivative_values[100:110], atol=1e-15)
    with pytest.raises(WindowError):
        periodic_field.evaluate(1e4)


def test_evaluate_periodic_interpolation_accuracy(periodic_field):
    x = np.linspace(-10, 10, 1001) + 0.013
    v, _ = periodic_field.evaluate(x)
    assert np.abs(v - 0.5 * (1 - np.cos(np.pi * x))).max() < 1e-6


def test_shifted_is_stationary_shift(poisson_field):
    s = poisson_field.shifted(2.5)
    assert s.evaluate(0.0)[0] == poisson_field.evaluate(2.5)[0]
    with pytest.raises(ConfigurationError):
        poisson_field.shifted(0.013)


def test_invalid_samples_rejected():
    with pytest.raises(ConfigurationError):
        from_samples([0.0, 1.2], [0.0, 0.0], 0.0, 0.1)
    with pytest.raises(ConfigurationError):
        from_samples([0.0, 0.5], [0.0, 0.0], 0.03, 0.1)
    f = from_samples([0.0, 0.5, 0.2], [0.0, 0.0, 0.0], -0.1, 0.1)
    assert f.sup_level == 0.5


def test_generator_validation():
    with pytest.raises(ConfigurationError):
        generate_mollified(1, "levy", 1.0, None, (0.0, 5.0), 0.05)
    with pytest.raises(ConfigurationError):
        generate_mollified(1, "poisson", 1.0, None, (0.0, 5.0), 0.8)
    with pytest.raises(ConfigurationError):
        generate_constant(1.5, (0.0, 5.0), 0.05)


def test_features_are_maximal_runs():
    vals = np.array([0.0, 0.0, 0.9, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    f = from_samples(vals, np.zeros_like(vals), 0.0, 1.0)
    feats = find_features(f, 0.5, 1.0)
    valleys = [(x.a, x.b) for x in feats if x.feature_kind == "valley"]
    hills = [(x.a, x.b) for x in feats if x.feature_kind == "hill"]
    assert valleys == [(0.0, 1.0), (3.0, 5.0)]
    assert hills == [(6.0, 8.0)]


def test_lowest_valley_within(poisson_field):
    v = lowest_valley(poisson_field, 2.0, within=(-50.0, 50.0))
    assert v is not None and -50 <= v.a and v.b <= 50
    assert v.length >= 2.0 - 1e-9


def test_audit_reports_caveat_and_constant_violation(constant_field, poisson_field):
    rep = audit_assumptions(poisson_field)
    assert rep["range_ok"] and rep["normalization_ok"] and rep["valley_hill_witnessed"]
    assert "cannot certify" in rep["caveat"]
    rep_c = audit_assumptions(constant_field)
    assert rep_c["tagged_violations"] == ["valley-hill"]
    assert not rep_c["valley_hill_witnessed"]


@settings(max_examples=20, deadline=None)
@given(lo=st.integers(-200, 100), width=st.integers(1, 40))
def test_window_consistency_property(lo, width):
    big = generate_mollified(5, "poisson", 2.0, KernelSpec(), (-250.0, 250.0), 0.05)
    sub = regenerate(big, (float(lo), float(lo + width)))
    i0 = sub.n0 - big.n0
    assert np.array_equal(big.values[i0:i0 + sub.n], sub.values)


def test_periodic_closed_form():
    f = generate_periodic(2.0, (-4.0, 4.0), 0.05)
    assert np.allclose(f.values, 0.5 * (1 - np.cos(np.pi * f.nodes)), atol=1e-15)
    assert f.sup_level == 1.0 and math.isclose(f.values.max(), 1.0)
