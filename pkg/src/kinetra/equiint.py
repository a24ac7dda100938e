"""Equiintegrability moduli, the indicator-transport experiment and x-translation moduli.

For a grid function the supremum of the mass carried by sets of measure at
most ``alpha`` is attained by a superlevel set, so both moduli are computed
exactly (at grid granularity) by sorting cells and filling the budget,
splitting the last cell.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .dispersion import _boundary_cells, mixing_time_lower_bound
from .errors import ConfigError
from .fields import ForceField
from .flow import IntegratorConfig
from .grid import InitialData, PhaseGrid, PhaseGridFunction, Rectangle, TestFunction, XGridFunction
from .transport import DEFAULT_SAFETY, SafetySpec, transport_derivative_fd, transport_sequence


def _truncated(f: PhaseGridFunction, K: Rectangle) -> np.ndarray:
    """|f| 1_K as a (n_x_nodes, n_v_nodes) array."""
    g = f.grid
    if K.dim != 2 * g.dim:
        raise ConfigError("K must be a phase-space rectangle")
    Kx, Kv = K.split()
    mx = Kx.contains(g.x_nodes())
    mv = Kv.contains(g.v_nodes())
    return np.abs(f.fibers) * (mx[:, None] & mv[None, :])


def _greedy(sorted_desc: np.ndarray, cell: float, budget: float) -> np.ndarray:
    """Mass of the best set of measure ``budget`` for rows of descending cell values."""
    full = int(math.floor(budget / cell))
    frac = budget / cell - full
    n = sorted_desc.shape[-1]
    if full >= n:
        return sorted_desc.sum(axis=-1) * cell
    mass = sorted_desc[..., :full].sum(axis=-1) * cell
    return mass + frac * cell * sorted_desc[..., full]


def modulus_v(f: PhaseGridFunction, K: Rectangle, alpha: float) -> float:
    """sup over families (A_x) with |A_x| <= alpha of int int_{A_x} 1_K |f| dv dx."""
    if not alpha > 0:
        raise ConfigError("alpha must be positive")
    vals = -np.sort(-_truncated(f, K), axis=1)
    per_x = _greedy(vals, f.cell_volume_v, alpha)
    return float(per_x.sum() * f.cell_volume_x)


def modulus_xv(f: PhaseGridFunction, K: Rectangle, alpha: float) -> float:
    """sup over sets A with |A| <= alpha of int_A 1_K |f| dx dv."""
    if not alpha > 0:
        raise ConfigError("alpha must be positive")
    vals = -np.sort(-_truncated(f, K).ravel())
    return float(_greedy(vals, f.cell_volume_x * f.cell_volume_v, alpha))


@dataclass
class EquiModulusReport:
    alphas: list
    modulus_v: list
    modulus_xv: list
    compact_region: list

    def rows(self) -> list:
        return list(zip(self.alphas, self.modulus_v, self.modulus_xv))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("alpha,modulus_v,modulus_xv\n")
            for a, mv, mxv in self.rows():
                fh.write(f"{a!r},{mv!r},{mxv!r}\n")

    def to_json(self) -> dict:
        return asdict(self)


def equi_report(f: PhaseGridFunction, K: Rectangle, alphas: Sequence[float]) -> EquiModulusReport:
    alphas = [float(a) for a in alphas]
    return EquiModulusReport(
        alphas,
        [modulus_v(f, K, a) for a in alphas],
        [modulus_xv(f, K, a) for a in alphas],
        K.to_json(),
    )


# epsilon-families used to tell the two notions apart


def x_concentration(eps: float, grid: PhaseGrid) -> PhaseGridFunction:
    """eps^-d 1_[0,eps]^d(x) 1_[0,1]^d(v): mass 1, concentrating in x."""
    d = grid.dim
    data = InitialData(lambda x, v: np.full(np.shape(x)[:-1], eps**-d), Rectangle.cube(0, eps, d).product(Rectangle.cube(0, 1, d)))
    return data.on_grid(grid)


def v_concentration(eps: float, grid: PhaseGrid) -> PhaseGridFunction:
    """1_[0,1]^d(x) eps^-d 1_[0,eps]^d(v): equiintegrable in neither sense as eps -> 0."""
    d = grid.dim
    data = InitialData(lambda x, v: np.full(np.shape(x)[:-1], eps**-d), Rectangle.cube(0, 1, d).product(Rectangle.cube(0, eps, d)))
    return data.on_grid(grid)


def joint_concentration(eps: float, grid: PhaseGrid) -> PhaseGridFunction:
    d = grid.dim
    data = InitialData(lambda x, v: np.full(np.shape(x)[:-1], eps ** (-2 * d)), Rectangle.cube(0, eps, 2 * d))
    return data.on_grid(grid)


def oscillation(eps: float, grid: PhaseGrid) -> PhaseGridFunction:
    """1 + sin(x_1 / eps) on [0,1]^{2d}: bounded, so equiintegrable in both senses."""
    d = grid.dim
    data = InitialData(lambda x, v: 1.0 + np.sin(x[..., 0] / eps), Rectangle.cube(0, 1, 2 * d))
    return data.on_grid(grid)


@dataclass
class SlabFiberReport:
    t: float
    T: float
    set_measure: float
    sup_fiber_measure: float
    bound: float
    grid_slack: float
    pairing_lhs: float
    pairing_rhs: float
    correction_term: float
    binary: bool

    @property
    def decomposition_residual(self) -> float:
        return abs(self.pairing_lhs - (self.pairing_rhs - self.correction_term))

    @property
    def passed(self) -> bool:
        return self.binary and self.sup_fiber_measure <= self.bound + self.grid_slack

    def to_json(self) -> dict:
        out = asdict(self)
        out["decomposition_residual"] = self.decomposition_residual
        out["passed"] = self.passed
        return out

    def row(self) -> tuple:
        return (self.t, self.sup_fiber_measure, self.bound, self.pairing_lhs, self.pairing_rhs, self.correction_term)


def slab_fiber_experiment(
    field: ForceField,
    f: PhaseGridFunction,
    A: Rectangle,
    t: float,
    psi: TestFunction,
    cfg: IntegratorConfig,
    df: Optional[PhaseGridFunction] = None,
    n_t: int = 32,
    slack_coeff: float = 2.0,
    safety: SafetySpec = DEFAULT_SAFETY,
) -> SlabFiberReport:
    """Transport Phi0 = 1_A(x), measure its fibres and check the pairing split.

    ``df`` is v.grad_x f + F.grad_v f on the grid (central differences when
    omitted). The pairings are int 1_A rho dx = int f psi Phi0 and
    int f psi Phi(t); the correction is int_0^t int Phi(s) L(f psi) with
    L(f psi) = psi L f + f F.grad_v psi, so lhs = rhs - correction up to
    quadrature error.
    """
    g = f.grid
    d = g.dim
    if A.dim != d:
        raise ConfigError("A must be a rectangle in x")
    if not t > 0:
        raise ConfigError("slab experiment needs t > 0")
    T = mixing_time_lower_bound(field.mixing_constant, d)
    phi0 = InitialData.indicator(A)
    if df is None:
        df = transport_derivative_fd(field, f)
    v = g.v_nodes()
    psi_v = psi.eval(v)
    fpsi = f.fibers * psi_v[None, :]
    x = np.broadcast_to(g.x_nodes()[:, None, :], (g.n_x_nodes, g.n_v_nodes, d))
    vv = np.broadcast_to(v[None, :, :], x.shape)
    F = field.eval(x, vv)
    L_fpsi = df.fibers * psi_v[None, :] + f.fibers * np.sum(F * psi.eval_grad(v)[None, :, :], axis=-1)
    cell = g.cell_volume_x * g.cell_volume_v

    s = np.linspace(0.0, t, n_t + 1)
    w = np.full(n_t + 1, t / n_t)
    w[0] = w[-1] = t / (2 * n_t)
    correction = 0.0
    lhs = rhs = 0.0
    binary = True
    phi_t = None
    for k, phi in enumerate(transport_sequence(field, phi0, s, g, cfg, safety)):
        vals = phi.fibers
        binary &= bool(np.all((vals == 0) | (vals == 1)))
        correction += w[k] * float(np.sum(vals * L_fpsi)) * cell
        if k == 0:
            lhs = float(np.sum(vals * fpsi)) * cell
        if k == n_t:
            rhs = float(np.sum(vals * fpsi)) * cell
            phi_t = phi
    fib = phi_t.fibers.sum(axis=1) * g.cell_volume_v
    i_star = int(np.argmax(fib))
    sup_fiber = float(fib[i_star])
    e1 = _boundary_cells(phi_t.fibers[i_star].reshape((g.nv,) * d) > 0) * g.cell_volume_v
    measure_A = A.volume
    bound = 2.0 * t**-d * measure_A
    return SlabFiberReport(
        t=float(t),
        T=T,
        set_measure=measure_A,
        sup_fiber_measure=sup_fiber,
        bound=bound,
        grid_slack=slack_coeff * e1,
        pairing_lhs=lhs,
        pairing_rhs=rhs,
        correction_term=correction,
        binary=binary,
    )


lem1_experiment = slab_fiber_experiment


def translation_modulus(rho: XGridFunction, K: Rectangle, deltas: Sequence[float]) -> list:
    """For each delta: max over lattice shifts |x'| <= delta of
    ||(1_K rho)(. + x') - (1_K rho)||_{L^1}, with zero extension off the grid."""
    g = rho.grid
    d = g.dim
    if K.dim != d:
        raise ConfigError("K must be a rectangle in x")
    u = rho.values * K.contains(g.nodes()).reshape(g.shape)
    out = []
    for delta in deltas:
        reach = np.floor(delta / g.dx + 1e-9).astype(int)
        ranges = [np.arange(-r, r + 1) for r in reach]
        best = 0.0
        for shift in np.stack([m.ravel() for m in np.meshgrid(*ranges, indexing="ij")], axis=-1):
            if np.linalg.norm(shift * g.dx) > delta + 1e-12:
                continue
            best = max(best, _shift_l1(u, shift) * g.cell_volume)
        out.append(best)
    return out


def _shift_l1(u: np.ndarray, shift) -> float:
    """sum |u(i + shift) - u(i)| with zero padding."""
    pad = [(abs(int(s)), abs(int(s))) for s in shift]
    big = np.pad(u, pad)
    core = tuple(slice(p[0], p[0] + n) for p, n in zip(pad, u.shape))
    moved = tuple(slice(p[0] + int(s), p[0] + int(s) + n) for p, s, n in zip(pad, shift, u.shape))
    # compare on the padded domain so mass shifted off the window still counts
    diff = np.zeros_like(big)
    diff[moved] += u
    diff[core] -= u
    return float(np.abs(diff).sum())
