import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kinetra.errors import ConfigError
from kinetra.fields import (
    BUILTIN_KINDS,
    H_FD,
    _central_jacobian,
    check_divergence_free_v,
    custom_field,
    estimate_lipschitz,
    make_builtin,
    max_entry_norm,
)
from kinetra.grid import Rectangle

ALL_BUILTINS = [
    ("Zero", 1, {}),
    ("Zero", 2, {}),
    ("Repulsive", 1, {}),
    ("Repulsive", 2, {}),
    ("Harmonic", 1, {}),
    ("Harmonic", 3, {}),
    ("Magnetic2D", 2, {"B": 1.5}),
    ("Magnetic3D", 3, {"B": [0.3, -0.2, 1.0]}),
]


def test_harmonic_eval():
    F = make_builtin("Harmonic", 1)
    assert F.eval(np.array([1.0]), np.array([0.0]))[0] == -1.0


def test_zero_lipschitz():
    assert make_builtin("Zero", 2).lipschitz_bound == 0.0


def test_lorentz_cross_product():
    F = make_builtin("Magnetic3D", 3, {"B": [0, 0, 1]})
    out = F.eval(np.zeros(3), np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(out, [0.0, -1.0, 0.0])


def test_magnetic2d_convention():
    F = make_builtin("Magnetic2D", 2, {"B": 2.0})
    np.testing.assert_allclose(F.eval(np.zeros(2), np.array([1.0, 3.0])), [6.0, -2.0])


def test_kind_is_case_insensitive():
    assert make_builtin("harmonic", 1).kind == make_builtin("HARMONIC", 1).kind


@pytest.mark.parametrize(
    "kind,dim,params",
    [("Magnetic2D", 3, {}), ("Magnetic3D", 2, {"B": [0, 0, 1]}), ("Magnetic3D", 3, {}), ("Harmonic", 0, {}), ("Vortex", 1, {})],
)
def test_bad_builtin_is_config_error(kind, dim, params):
    with pytest.raises(ConfigError):
        make_builtin(kind, dim, params)


@pytest.mark.parametrize("kind,dim,params", ALL_BUILTINS)
def test_analytic_jacobians_match_finite_differences(kind, dim, params, rng):
    F = make_builtin(kind, dim, params)
    x = rng.uniform(-2, 2, size=(100, dim))
    v = rng.uniform(-2, 2, size=(100, dim))
    fd_x = _central_jacobian(lambda y: F.eval(y, v), x, H_FD)
    fd_v = _central_jacobian(lambda y: F.eval(x, y), v, H_FD)
    assert np.max(np.abs(F.jacobian_x(x, v) - fd_x)) <= 1e-6
    assert np.max(np.abs(F.jacobian_v(x, v) - fd_v)) <= 1e-6


@pytest.mark.parametrize("kind,dim,params", ALL_BUILTINS)
def test_builtins_are_divergence_free_in_v(kind, dim, params, rng):
    F = make_builtin(kind, dim, params)
    pts = rng.uniform(-3, 3, size=(50, 2 * dim))
    rep = check_divergence_free_v(F, pts)
    assert rep.passed
    assert rep.max_abs_div <= 1e-12


def test_divergent_custom_field_fails():
    F = custom_field(lambda x, v: np.stack([v[..., 0], np.zeros_like(v[..., 0])], axis=-1), 2, velocity_dependent=True)
    rep = check_divergence_free_v(F, np.random.default_rng(1).uniform(-1, 1, size=(20, 4)))
    assert rep.max_abs_div == pytest.approx(1.0, abs=1e-8)
    assert not rep.passed


@pytest.mark.parametrize("kind,expected", [("Zero", 0.0), ("Harmonic", 1.0), ("Repulsive", 1.0)])
@pytest.mark.parametrize("dim", [1, 2])
def test_estimate_lipschitz_builtins_exact(kind, expected, dim):
    F = make_builtin(kind, dim)
    est = estimate_lipschitz(F, Rectangle.cube(-3, 5, dim), n_samples=200)
    assert abs(est.value - expected) <= 1e-12


def test_estimate_lipschitz_sine():
    F = custom_field(lambda x, v: np.sin(x), 1)
    est = estimate_lipschitz(F, Rectangle.cube(-math.pi, math.pi, 1), n_samples=1001)
    # the sample set contains x = 0 where |cos| = 1; the FD error is O(h_fd^2)
    assert est.value == pytest.approx(1.0, abs=1e-9)
    assert est.n_per_axis == 1001


@given(lo=st.floats(-3, 3), width=st.floats(0.01, 2), n=st.integers(2, 50))
def test_estimate_never_exceeds_true_sup(lo, width, n):
    F = custom_field(lambda x, v: np.sin(3 * x), 1)
    est = estimate_lipschitz(F, Rectangle.cube(lo, lo + width, 1), n_samples=n)
    grid = np.linspace(lo, lo + width, 20001)
    true_sup = float(np.max(np.abs(3 * np.cos(3 * grid))))
    assert est.value <= true_sup + 1e-7


def test_mixing_constant_adds_velocity_lipschitz_for_magnetic():
    F = make_builtin("Magnetic2D", 2, {"B": 2.0})
    assert F.lipschitz_bound == 0.0
    assert F.mixing_constant == pytest.approx(2.0)
    assert make_builtin("Harmonic", 2).mixing_constant == 1.0


@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
def test_max_entry_norm_is_max_abs(entries):
    a = np.array(entries).reshape(2, 2)
    assert max_entry_norm(a) == max(abs(e) for e in entries)


@given(
    x=st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    v=st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    B=st.floats(-5, 5),
)
def test_magnetic_force_is_orthogonal_to_velocity(x, v, B):
    F = make_builtin("Magnetic2D", 2, {"B": B})
    out = F.eval(np.array(x), np.array(v))
    assert abs(float(out @ np.array(v))) <= 1e-9 * (1 + np.dot(v, v) * abs(B))


def test_builtin_kinds_listed():
    assert set(BUILTIN_KINDS) == {"Zero", "Repulsive", "Harmonic", "Magnetic2D", "Magnetic3D"}
