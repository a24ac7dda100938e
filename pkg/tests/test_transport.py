import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import erfc

from kinetra.errors import ConfigError, EscapeError
from kinetra.fields import custom_field, make_builtin
from kinetra.flow import IntegratorConfig
from kinetra.grid import InitialData, PhaseGrid, PhaseGridFunction, Rectangle, TestFunction, XGrid, XGridFunction
from kinetra.transport import (
    _exp_trapezoid_weights,
    duality_check,
    duality_terms,
    resolvent,
    resolvent_weak_residual,
    resolvent_with_info,
    sobolev_seminorm,
    solve_cauchy,
    transport_derivative,
    transport_derivative_fd,
    transport_sequence,
    velocity_moment,
)

CFG = IntegratorConfig(step=1e-3)
# int_0^inf e^{-s} e^{-s^2} ds = (sqrt(pi)/2) e^{1/4} erfc(1/2)
RESOLVENT_GAUSSIAN_ORACLE = 0.545641360765047


def unit_square(d=1):
    return InitialData.indicator(Rectangle.cube(0, 1, d), Rectangle.cube(0, 1, d))


def test_oracle_constant_matches_closed_form_and_quadrature():
    closed = math.sqrt(math.pi) / 2 * math.exp(0.25) * erfc(0.5)
    assert closed == pytest.approx(RESOLVENT_GAUSSIAN_ORACLE, abs=1e-15)
    val, _ = quad(lambda s: math.exp(-s - s * s), 0, math.inf, epsabs=1e-13)
    assert val == pytest.approx(RESOLVENT_GAUSSIAN_ORACLE, abs=1e-12)


def test_free_transport_shifts_data():
    g = PhaseGrid.cubic(1, (-1, 3), (-1, 1.5), 64, 48)
    f0 = InitialData.bump([0.5], [0.2], 0.6)
    t = 1.3
    f = solve_cauchy(make_builtin("Zero", 1), f0, t, g, CFG)
    x = g.x_nodes()[:, None, :]
    v = g.v_nodes()[None, :, :]
    x, v = np.broadcast_arrays(x, v)
    np.testing.assert_allclose(f.fibers, f0.eval(x - t * v, v), atol=1e-12)


def test_time_zero_is_sampling():
    g = PhaseGrid.cubic(2, (-1, 2), (-1, 2), 8, 8)
    f0 = unit_square(2)
    np.testing.assert_array_equal(solve_cauchy(make_builtin("Harmonic", 2), f0, 0.0, g, CFG).values, f0.on_grid(g).values)


def test_harmonic_quarter_turn_of_square():
    g = PhaseGrid.cubic(1, (-2, 2), (-2, 2), 40, 40)
    f = solve_cauchy(make_builtin("Harmonic", 1), unit_square(), math.pi / 2, g, CFG)
    x = g.x_nodes()[:, 0][:, None]
    v = g.v_nodes()[:, 0][None, :]
    expected = ((-v >= 0) & (-v <= 1) & (x >= 0) & (x <= 1)).astype(float)
    np.testing.assert_array_equal(f.fibers, expected)


@pytest.mark.parametrize("kind,dim,params", [("Harmonic", 1, {}), ("Repulsive", 2, {}), ("Magnetic2D", 2, {"B": 0.7})])
def test_box_fast_path_matches_generic_evaluation(kind, dim, params):
    F = make_builtin(kind, dim, params)
    n = 24 if dim == 1 else 10
    g = PhaseGrid.cubic(dim, (-1.5, 2.5), (-2, 2.5), n, n)
    box = unit_square(dim)
    generic = InitialData(box.func, box.support, binary=True)
    fast = solve_cauchy(F, box, 0.83, g, CFG)
    slow = solve_cauchy(F, generic, 0.83, g, CFG)
    np.testing.assert_array_equal(fast.values, slow.values)


def test_transported_indicator_stays_binary():
    g = PhaseGrid.cubic(1, (-2, 3), (-3, 3), 50, 50)
    f = solve_cauchy(make_builtin("Repulsive", 1), unit_square(), 0.9, g, CFG)
    assert set(np.unique(f.values)) <= {0.0, 1.0}


@pytest.mark.parametrize("n", [64, 128, 256])
def test_mass_is_conserved_up_to_staircase(n):
    g = PhaseGrid.cubic(1, (-3, 4), (-4, 4), n, n)
    for kind in ("Zero", "Harmonic", "Repulsive"):
        f = solve_cauchy(make_builtin(kind, 1), unit_square(), 0.8, g, CFG)
        # the image is a parallelogram of area 1; boundary cells give O(dx + dv)
        assert abs(f.mass - 1.0) <= 8 * (g.dx[0] + g.dv[0])


def test_escape_from_declared_window_is_reported():
    g = PhaseGrid.cubic(1, (0, 1), (0, 1), 8, 8)
    cfg = IntegratorConfig(step=1e-2, safety=Rectangle.cube(-0.5, 1.5, 2))
    with pytest.raises(EscapeError):
        solve_cauchy(make_builtin("Repulsive", 1), unit_square(), 2.0, g, cfg)


def test_transport_sequence_nonaffine_matches_direct():
    F = custom_field(lambda x, v: -np.sin(x), 1, lipschitz_bound=1.0)
    g = PhaseGrid.cubic(1, (-1, 2), (-1.5, 1.5), 16, 16)
    f0 = InitialData.bump([0.5], [0.0], 0.8)
    cfg = IntegratorConfig(step=1e-2)
    times = [0.0, 0.25, 0.7]
    for t, f in zip(times, transport_sequence(F, f0, times, g, cfg)):
        np.testing.assert_allclose(f.values, solve_cauchy(F, f0, t, g, cfg).values, atol=1e-12)


def test_constant_source_resolvent_is_one_over_lambda():
    g = PhaseGrid.cubic(1, (-1, 1), (-1, 1), 4, 4)
    src = InitialData.constant(1.0, Rectangle.cube(-1e4, 1e4, 2))
    for kind in ("Zero", "Harmonic"):
        Rg = resolvent(make_builtin(kind, 1), src, 2.0, g, CFG, tail_tol=1e-8)
        assert np.max(np.abs(Rg.values - 0.5)) <= 1e-8


def test_zero_source_resolvent():
    g = PhaseGrid.cubic(1, (-1, 1), (-1, 1), 4, 4)
    src = InitialData.constant(0.0, Rectangle.cube(-1, 1, 2))
    assert np.all(resolvent(make_builtin("Harmonic", 1), src, 1.0, g, CFG).values == 0)


def test_gaussian_source_against_quadrature_oracle():
    # single node at (x, v) = (0, 1): R g = int e^{-s} e^{-(0 - s)^2} ds
    g = PhaseGrid.cubic(1, (-0.5, 0.5), (0.5, 1.5), 1, 1)
    src = InitialData(lambda x, v: np.exp(-x[..., 0] ** 2), Rectangle.whole(2), sup_norm=1.0)
    Rg, info = resolvent_with_info(make_builtin("Zero", 1), src, 1.0, g, CFG, tail_tol=1e-8)
    assert abs(Rg.values.item() - RESOLVENT_GAUSSIAN_ORACLE) <= 2e-8
    assert info.tail_bound <= 1e-8 * (1 + 1e-12)


@pytest.mark.parametrize("lam", [0.0, -1.0])
def test_nonpositive_lambda_rejected(lam):
    g = PhaseGrid.cubic(1, (0, 1), (0, 1), 2, 2)
    with pytest.raises(ConfigError):
        resolvent(make_builtin("Zero", 1), unit_square(), lam, g, CFG)


@given(lam=st.floats(0.05, 20), h=st.floats(1e-3, 0.5), n=st.integers(1, 200))
def test_exponential_weights_positive_with_exact_total(lam, h, n):
    w = _exp_trapezoid_weights(lam, h, n)
    # far weights may underflow to zero but never go negative
    assert np.all(w >= 0) and w[0] > 0
    assert w.sum() == pytest.approx(-math.expm1(-lam * n * h) / lam, rel=1e-10)


@settings(max_examples=8)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(0.5, 4.0))
def test_resolvent_l1_contraction(seed, lam):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-0.5, 0.5, size=2)
    src = InitialData.bump([c[0]], [c[1]], rng.uniform(0.3, 0.8), rng.uniform(0.5, 2.0))
    F = make_builtin("Harmonic", 1)
    g = PhaseGrid.cubic(1, (-2, 2), (-2, 2), 32, 32)
    Rg = resolvent(F, src, lam, g, IntegratorConfig(step=1e-2), tail_tol=1e-6, quad_step=0.1)
    g_l1 = np.abs(src.on_grid(g).values).sum() * g.cell_volume_x * g.cell_volume_v
    r_l1 = np.abs(Rg.values).sum() * g.cell_volume_x * g.cell_volume_v
    # harmonic orbits of radius <= 1.3 stay in the window, so the flow is a
    # measure-preserving map of the grid region up to the Riemann-sum error
    assert r_l1 <= g_l1 / lam + 1e-6 * g.window.volume + 0.02 * g_l1 / lam


def test_resolvent_solves_the_equation_weakly():
    F = make_builtin("Harmonic", 1)
    g = PhaseGrid.cubic(1, (-2.5, 2.5), (-2.5, 2.5), 96, 96)
    src = InitialData.bump([0.3], [-0.2], 0.7)
    phi = InitialData.bump([0.0], [0.1], 0.9)
    Rg = resolvent(F, src, 1.5, g, IntegratorConfig(step=1e-2), tail_tol=1e-8)
    assert resolvent_weak_residual(F, Rg, src, 1.5, phi) <= 1e-5


def test_moment_of_separable_product():
    g = PhaseGrid.cubic(1, (-2, 2), (-1, 1), 16, 200)
    f = InitialData(lambda x, v: np.exp(-x[..., 0] ** 2), Rectangle([-2, -1], [2, 1])).on_grid(g)
    one = TestFunction.from_callable(lambda v: np.ones(v.shape[:-1]), 1.5)
    rho = velocity_moment(f, one)
    np.testing.assert_allclose(rho.values, 2 * np.exp(-g.x_nodes()[:, 0] ** 2), atol=2 * g.dv[0])


def test_moment_of_indicator_with_linear_weight():
    g = PhaseGrid.cubic(1, (-1, 2), (-1, 2), 30, 300)
    lin = TestFunction.from_callable(lambda v: v[..., 0], 5.0)
    rho = velocity_moment(unit_square().on_grid(g), lin)
    inside = (g.x_nodes()[:, 0] > 0) & (g.x_nodes()[:, 0] < 1)
    np.testing.assert_allclose(rho.values[inside], 0.5, atol=g.dv[0])
    assert np.all(rho.values[~inside] == 0)


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3))
def test_moment_linear_and_positive(seed, a):
    rng = np.random.default_rng(seed)
    g = PhaseGrid.cubic(1, (0, 1), (-1, 1), 5, 7)
    f1 = PhaseGridFunction(g, rng.uniform(0, 1, g.shape))
    f2 = PhaseGridFunction(g, rng.uniform(0, 1, g.shape))
    psi = TestFunction.smooth_bump(1.2)
    combo = velocity_moment(f1.with_values(f1.values + a * f2.values), psi).values
    np.testing.assert_allclose(combo, velocity_moment(f1, psi).values + a * velocity_moment(f2, psi).values, atol=1e-12)
    assert np.all(velocity_moment(f1, psi).values >= 0)


def test_fd_transport_derivative_close_to_analytic():
    F = make_builtin("Harmonic", 1)
    g = PhaseGrid.cubic(1, (-1, 1), (-1, 1), 128, 128)
    # off-centre: a bump centred at the origin is invariant under the rotation
    b = InitialData.bump([0.2], [-0.1], 0.7)
    exact = transport_derivative(F, b, g)
    approx = transport_derivative_fd(F, b.on_grid(g))
    assert np.max(np.abs(exact.values - approx.values)) <= 0.05 * np.max(np.abs(exact.values))


class TestDuality:
    grid = PhaseGrid.cubic(1, (-1.5, 2.5), (-2, 2), 64, 64)

    def _terms(self, kind, n, n_t, t=0.5):
        g = PhaseGrid.cubic(1, (-1.5, 2.5), (-2, 2), n, n)
        F = make_builtin(kind, 1)
        f = InitialData.bump([0.5], [0.0], 0.7)
        phi0 = InitialData.bump([0.3], [0.2], 0.6)
        return duality_terms(F, f.on_grid(g), transport_derivative(F, f, g), phi0, t, CFG, n_t=n_t)

    def test_zero_data_gives_zero(self):
        g = self.grid
        z = PhaseGridFunction(g, np.zeros(g.shape))
        assert duality_check(make_builtin("Zero", 1), z, z, InitialData.bump([0.0], [0.0], 0.5), 0.5, CFG) == 0.0

    def test_time_zero_gives_zero(self):
        assert self._terms("Harmonic", 32, 8, t=0.0).residual == 0.0

    @pytest.mark.parametrize("kind", ["Zero", "Harmonic"])
    def test_residual_small_and_second_order_in_time(self, kind):
        coarse = self._terms(kind, 128, 16).residual
        fine = self._terms(kind, 256, 32).residual
        assert fine <= 1e-4
        assert 3.0 <= coarse / fine <= 5.0

    def test_terms_are_nontrivial(self):
        terms = self._terms("Zero", 64, 16)
        assert abs(terms.correction) > 1e-3


def test_sobolev_constant_equals_l2():
    xg = XGrid(Rectangle([0.0], [2.0]), 16)
    rho = XGridFunction(xg, np.full(16, 3.0))
    for s in (0.1, 0.25, 0.9):
        assert sobolev_seminorm(rho, s) == pytest.approx(rho.l2(), rel=1e-12)


def test_sobolev_zero():
    xg = XGrid(Rectangle([0.0], [1.0]), 8)
    assert sobolev_seminorm(XGridFunction(xg, np.zeros(8)), 0.5) == 0.0


def test_sobolev_single_mode():
    xg = XGrid(Rectangle([0.0], [1.0]), 64)
    rho = XGridFunction(xg, np.cos(2 * np.pi * xg.nodes()[:, 0]))
    expected = (1 + 4 * np.pi**2) ** (0.25 / 2) * rho.l2()
    assert sobolev_seminorm(rho, 0.25) == pytest.approx(expected, rel=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.45))
def test_sobolev_increasing_in_s(seed, s):
    rng = np.random.default_rng(seed)
    xg = XGrid(Rectangle([0.0], [1.0]), 32)
    rho = XGridFunction(xg, rng.normal(size=32))
    assert sobolev_seminorm(rho, s) <= sobolev_seminorm(rho, s + 0.5) + 1e-12
    assert sobolev_seminorm(rho, s) >= rho.l2() * (1 - 1e-12)


@pytest.mark.parametrize("s", [0.0, 1.0, -0.2])
def test_sobolev_index_range(s):
    xg = XGrid(Rectangle([0.0], [1.0]), 8)
    with pytest.raises(ConfigError):
        sobolev_seminorm(XGridFunction(xg, np.ones(8)), s)
