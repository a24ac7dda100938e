"""Solution operators built on the characteristic flow.

Everything here is semi-Lagrangian: a grid value is the datum evaluated at
the backward foot Z(-t; x, v) of the node. There is no interpolation when the
datum is analytic, so the only error is the ODE error plus Riemann sums.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Union

import numpy as np

from .errors import ConfigError, EscapeError
from .fields import ForceField
from .flow import (
    IntegratorConfig,
    apply_homogeneous,
    default_safety_window,
    flow_points,
    n_steps,
    propagator,
    rk4_step_matrix,
)
from .grid import InitialData, PhaseGrid, PhaseGridFunction, Rectangle, TestFunction, XGridFunction

log = logging.getLogger(__name__)

DEFAULT_SAFETY = "default"
SafetySpec = Union[Rectangle, str, None]

# phase points handled per chunk when sweeping a grid
CHUNK_POINTS = 1 << 20


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get("KINETRA_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    workers = min(n_threads(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _resolve_safety(field: ForceField, grid: PhaseGrid, t: float, cfg: IntegratorConfig, safety: SafetySpec):
    if cfg.safety is not None:
        return cfg.safety
    if isinstance(safety, str):
        if safety != DEFAULT_SAFETY:
            raise ConfigError(f"unknown safety spec {safety!r}")
        return default_safety_window(field, grid.window, t)
    return safety


def _node_corners(grid: PhaseGrid) -> np.ndarray:
    """The extreme nodes of the grid (2**(2d) phase points)."""
    lo = np.concatenate([grid.x_window.lo + grid.dx / 2, grid.v_window.lo + grid.dv / 2])
    hi = np.concatenate([grid.x_window.hi - grid.dx / 2, grid.v_window.hi - grid.dv / 2])
    m = lo.size
    bits = (np.arange(2**m)[:, None] >> np.arange(m)) & 1
    return np.where(bits == 1, hi, lo)


def _check_affine_escape(field: ForceField, grid: PhaseGrid, t: float, cfg: IntegratorConfig, safety: Rectangle):
    # For an affine step map, the coordinate extremes over all nodes are attained
    # at the extreme nodes, so stepping the corners is an exact escape test.
    n, dt = n_steps(t, cfg.step)
    S = rk4_step_matrix(field, dt)
    y = _node_corners(grid)
    for k in range(n):
        y = apply_homogeneous(S, y)
        if not np.all(safety.contains(y)):
            raise EscapeError((k + 1) * dt)


def _chunk_slices(grid: PhaseGrid) -> list:
    per = max(1, CHUNK_POINTS // grid.n_v_nodes)
    n = grid.n_x_nodes
    return [slice(i, min(i + per, n)) for i in range(0, n, per)]


def _affine_parts(field: ForceField, grid: PhaseGrid, t: float, cfg: IntegratorConfig, safety):
    """Feet split as Z(t; x, v) = xpart[x] + vpart[v] for an affine field."""
    if safety is not None:
        _check_affine_escape(field, grid, t, cfg, safety)
    H = propagator(field, t, cfg)
    m = 2 * grid.dim
    xpart = grid.x_nodes() @ H[:m, : grid.dim].T + H[:m, m]
    vpart = grid.v_nodes() @ H[:m, grid.dim : m].T
    return xpart, vpart


def grid_feet(field: ForceField, grid: PhaseGrid, t: float, cfg: IntegratorConfig, safety: SafetySpec = DEFAULT_SAFETY) -> Iterator[tuple[slice, np.ndarray]]:
    """Yield ``(x_slice, Z(t; nodes))`` chunks with feet of shape ``(k, n_v_nodes, 2d)``."""
    safety = _resolve_safety(field, grid, t, cfg, safety)
    d = grid.dim
    slices = _chunk_slices(grid)
    if field.affine is not None:
        xpart, vpart = _affine_parts(field, grid, t, cfg, safety)
        for sl in slices:
            yield sl, xpart[sl, None, :] + vpart[None, :, :]
        return
    xs, vs = grid.x_nodes(), grid.v_nodes()
    sub = cfg.with_safety(safety)
    for sl in slices:
        x = np.repeat(xs[sl], len(vs), axis=0)
        v = np.tile(vs, (sl.stop - sl.start, 1))
        feet = flow_points(field, np.concatenate([x, v], axis=1), t, sub)
        yield sl, feet.reshape(sl.stop - sl.start, len(vs), 2 * d)


def _box_indicator_affine(box: Rectangle, xpart: np.ndarray, vpart: np.ndarray, out: np.ndarray, sl: slice) -> None:
    # lo_k <= xpart_k + vpart_k <= hi_k  <=>  lo_k - xpart_k <= vpart_k <= hi_k - xpart_k
    mask = np.ones((sl.stop - sl.start, len(vpart)), dtype=bool)
    tmp = np.empty_like(mask)
    for k in range(box.dim):
        np.greater_equal(vpart[None, :, k], (box.lo[k] - xpart[sl, k])[:, None], out=tmp)
        mask &= tmp
        np.less_equal(vpart[None, :, k], (box.hi[k] - xpart[sl, k])[:, None], out=tmp)
        mask &= tmp
    out[sl] = mask


def solve_cauchy(field: ForceField, f0: InitialData, t: float, grid: PhaseGrid, cfg: IntegratorConfig, safety: SafetySpec = DEFAULT_SAFETY) -> PhaseGridFunction:
    """f(t, x, v) = f0(Z(-t; x, v)) at every grid node."""
    out = np.empty((grid.n_x_nodes, grid.n_v_nodes))
    if field.affine is not None and f0.box is not None:
        safe = _resolve_safety(field, grid, -t, cfg, safety)
        xpart, vpart = _affine_parts(field, grid, -t, cfg, safe)
        _map(lambda sl: _box_indicator_affine(f0.box, xpart, vpart, out, sl), _chunk_slices(grid))
        return PhaseGridFunction(grid, out)

    def work(item):
        sl, feet = item
        out[sl] = f0.eval_z(feet)

    _map(work, grid_feet(field, grid, -t, cfg, safety))
    return PhaseGridFunction(grid, out)


def transport_sequence(field: ForceField, f0: InitialData, times: Iterable[float], grid: PhaseGrid, cfg: IntegratorConfig, safety: SafetySpec = DEFAULT_SAFETY) -> Iterator[PhaseGridFunction]:
    """solve_cauchy at nondecreasing nonnegative times, reusing feet between times."""
    times = [float(s) for s in times]
    if any(b < a for a, b in zip(times, times[1:])) or (times and times[0] < 0):
        raise ValueError("times must be nonnegative and nondecreasing")
    if field.affine is not None or not times:
        for s in times:
            yield solve_cauchy(field, f0, s, grid, cfg, safety)
        return
    t_max = times[-1]
    safe = _resolve_safety(field, grid, t_max, cfg, safety)
    xs, vs = grid.x_nodes(), grid.v_nodes()
    z = np.concatenate([np.repeat(xs, len(vs), axis=0), np.tile(vs, (len(xs), 1))], axis=1)
    prev = 0.0
    for s in times:
        if s > prev:
            sub = IntegratorConfig(cfg.step, cfg.scheme, cfg.max_time + s, safe)
            z = flow_points(field, z, -(s - prev), sub)
        prev = s
        yield PhaseGridFunction(grid, f0.eval_z(z))


def _exp_trapezoid_weights(lam: float, h: float, n: int) -> np.ndarray:
    """Weights for int_0^{nh} e^{-lam s} G(s) ds with G linearly interpolated.

    The exponential factor is integrated exactly, so the weights are positive
    and sum to (1 - e^{-lam n h}) / lam.
    """
    x = lam * h
    em = math.exp(-x)
    left = h * (x + math.expm1(-x)) / x**2  # node at the left end of an interval
    right = h * (-math.expm1(-x) - x * em) / x**2
    decay = np.exp(-lam * h * np.arange(n + 1))
    w = np.zeros(n + 1)
    w[:-1] += left
    w[1:] += right * (1.0 / em)  # right node weight carries e^{-lam s_{k-1}} = e^{-lam s_k} / em
    return w * decay


@dataclass(frozen=True)
class ResolventInfo:
    horizon: float
    quad_step: float
    n_nodes: int
    quad_error_estimate: float
    tail_bound: float
    refinements: int


def resolvent_with_info(
    field: ForceField,
    g: InitialData,
    lam: float,
    grid: PhaseGrid,
    cfg: IntegratorConfig,
    tail_tol: float = 1e-8,
    quad_step: float = 0.05,
    max_refine: int = 4,
    safety: SafetySpec = DEFAULT_SAFETY,
) -> tuple[PhaseGridFunction, ResolventInfo]:
    """R_lam g = int_0^S e^{-lam s} g(Z(-s)) ds at every node.

    S is chosen so the neglected tail ``|g|_inf e^{-lam S} / lam`` is half of
    ``tail_tol``, leaving the other half for quadrature and rounding. The quadrature integrates e^{-lam s} exactly against the
    piecewise-linear interpolant of g(Z(-s)) and is Richardson-combined with
    the rule at twice the step. The step is halved until the error estimate
    of the finer rule, |fine - coarse| / 3, is below ``tail_tol`` or
    ``max_refine`` halvings have been spent; the returned combination is at
    least as accurate as that estimate for smooth data.
    """
    if not lam > 0:
        raise ConfigError("resolvent parameter lambda must be positive")
    if not tail_tol > 0:
        raise ConfigError("tail_tol must be positive")
    g_inf = g.sup_norm
    if g_inf is None:
        g_inf = float(np.abs(g.on_grid(grid).values).max(initial=0.0))
    if g_inf == 0.0:
        return PhaseGridFunction(grid, np.zeros(grid.shape)), ResolventInfo(0.0, 0.0, 1, 0.0, 0.0, 0)
    ratio = 0.5 * tail_tol * lam / g_inf
    S = -math.log(ratio) / lam if ratio < 1 else 0.0
    if S == 0.0:
        return PhaseGridFunction(grid, np.zeros(grid.shape)), ResolventInfo(0.0, 0.0, 1, 0.0, g_inf / lam, 0)
    safe = _resolve_safety(field, grid, S, cfg, safety)
    run_cfg = IntegratorConfig(cfg.step, cfg.scheme, max(cfg.max_time, S), None)

    n_coarse = max(2, math.ceil(S / quad_step))
    xs, vs = grid.x_nodes(), grid.v_nodes()
    z0 = np.concatenate([np.repeat(xs, len(vs), axis=0), np.tile(vs, (len(xs), 1))], axis=1)
    refinements = 0
    while True:
        n_fine = 2 * n_coarse
        h = S / n_fine
        wf = _exp_trapezoid_weights(lam, h, n_fine)
        wc = _exp_trapezoid_weights(lam, 2 * h, n_coarse)
        fine = np.zeros(len(z0))
        coarse = np.zeros(len(z0))
        if field.affine is not None:
            if safe is not None:
                _check_affine_escape(field, grid, -S, run_cfg, safe)
            H = propagator(field, -h, run_cfg)
            z = z0
            for k in range(n_fine + 1):
                if k:
                    z = apply_homogeneous(H, z)
                G = g.eval_z(z)
                fine += wf[k] * G
                if k % 2 == 0:
                    coarse += wc[k // 2] * G
        else:
            z = z0
            step_cfg = run_cfg.with_safety(safe)
            for k in range(n_fine + 1):
                if k:
                    z = flow_points(field, z, -h, step_cfg)
                G = g.eval_z(z)
                fine += wf[k] * G
                if k % 2 == 0:
                    coarse += wc[k // 2] * G
        err = float(np.max(np.abs(fine - coarse))) / 3.0
        if err <= tail_tol or refinements >= max_refine:
            if err > tail_tol:
                log.warning("resolvent quadrature error estimate %.3g exceeds tail_tol %.3g", err, tail_tol)
            info = ResolventInfo(S, h, n_fine + 1, err, g_inf * math.exp(-lam * S) / lam, refinements)
            # Richardson combination: weights (4 wf - wc) / 3 stay positive and
            # keep the exact total int_0^S e^{-lam s} ds
            return PhaseGridFunction(grid, (4.0 * fine - coarse) / 3.0), info
        n_coarse = n_fine
        refinements += 1


def resolvent(field, g, lam, grid, cfg, tail_tol: float = 1e-8, **kwargs) -> PhaseGridFunction:
    return resolvent_with_info(field, g, lam, grid, cfg, tail_tol, **kwargs)[0]


def velocity_moment(f: PhaseGridFunction, psi: TestFunction) -> XGridFunction:
    """rho(x) = sum_v f(x, v) psi(v) dv (midpoint rule)."""
    weights = psi.eval(f.grid.v_nodes())
    rho = f.fibers @ weights * f.cell_volume_v
    return XGridFunction(f.grid.x_grid(), rho)


def transport_derivative(field: ForceField, data: InitialData, grid: PhaseGrid) -> PhaseGridFunction:
    """v.grad_x f + F.grad_v f on the grid, from the datum's analytic gradient."""
    gx, gv = data.grad_on_grid(grid)
    x = np.broadcast_to(grid.x_nodes()[:, None, :], gx.shape)
    v = np.broadcast_to(grid.v_nodes()[None, :, :], gx.shape)
    vals = np.sum(v * gx, axis=-1) + np.sum(field.eval(x, v) * gv, axis=-1)
    return PhaseGridFunction(grid, vals)


def transport_derivative_fd(field: ForceField, f: PhaseGridFunction) -> PhaseGridFunction:
    """Second-order central-difference version of transport_derivative for stored data."""
    g = f.grid
    d = g.dim
    spacings = list(g.dx) + list(g.dv)
    grads = np.gradient(f.values, *spacings) if f.values.ndim > 1 else [np.gradient(f.values, spacings[0])]
    x = g.x_nodes()[:, None, :]
    v = g.v_nodes()[None, :, :]
    x, v = np.broadcast_arrays(x, v)
    F = field.eval(x, v)
    out = np.zeros((g.n_x_nodes, g.n_v_nodes))
    for i in range(d):
        out += v[..., i] * grads[i].reshape(out.shape) + F[..., i] * grads[d + i].reshape(out.shape)
    return PhaseGridFunction(g, out)


@dataclass(frozen=True)
class DualityTerms:
    lhs: float
    pairing_t: float
    correction: float

    @property
    def rhs(self) -> float:
        return self.pairing_t - self.correction

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


def duality_terms(field: ForceField, f: PhaseGridFunction, df: PhaseGridFunction, phi0: InitialData, t: float, cfg: IntegratorConfig, n_t: int = 64, safety: SafetySpec = DEFAULT_SAFETY) -> DualityTerms:
    """Both sides of the Green identity

    int f Phi0 = int f Phi(t) - int_0^t int Phi(s) (v.grad_x f + F.grad_v f),

    with Phi the transported ``phi0`` and the time integral by the composite
    trapezoid rule on ``n_t`` slices.
    """
    if t < 0:
        raise ConfigError("duality check needs t >= 0")
    grid = f.grid
    lhs = f.integrate(phi0.on_grid(grid))
    if t == 0:
        return DualityTerms(lhs, lhs, 0.0)
    s = np.linspace(0.0, t, n_t + 1)
    w = np.full(n_t + 1, t / n_t)
    w[0] = w[-1] = t / (2 * n_t)
    correction = 0.0
    pairing_t = 0.0
    for k, phi in enumerate(transport_sequence(field, phi0, s, grid, cfg, safety)):
        correction += w[k] * phi.integrate(df)
        if k == n_t:
            pairing_t = f.integrate(phi)
    return DualityTerms(lhs, pairing_t, correction)


def duality_check(field, f, df, phi0, t, cfg, n_t: int = 64, safety: SafetySpec = DEFAULT_SAFETY) -> float:
    """|LHS - RHS| of the Green identity."""
    return duality_terms(field, f, df, phi0, t, cfg, n_t, safety).residual


def resolvent_weak_residual(field: ForceField, Rg: PhaseGridFunction, g: InitialData, lam: float, phi: InitialData) -> float:
    """|lam <Rg, phi> - <Rg, L phi> - <g, phi>| for a smooth test function ``phi``.

    L = v.grad_x + F.grad_v is skew-adjoint, so this vanishes for the exact
    solution of lam u + L u = g.
    """
    grid = Rg.grid
    phi_h = phi.on_grid(grid)
    Lphi = transport_derivative(field, phi, grid)
    return abs(lam * Rg.integrate(phi_h) - Rg.integrate(Lphi) - g.on_grid(grid).integrate(phi_h))


def sobolev_seminorm(rho: XGridFunction, s: float) -> float:
    """(sum_xi (1 + |xi|^2)^s |rho_hat(xi)|^2)^(1/2) on the periodised x-window.

    Normalised so that s = 0 gives the discrete L2 norm (Plancherel).
    """
    if not 0 < s < 1:
        raise ConfigError("Sobolev index must lie in (0, 1)")
    g = rho.grid
    spec = np.fft.fftn(rho.values)
    power = np.abs(spec) ** 2 * g.cell_volume / rho.values.size
    xi2 = np.zeros(rho.values.shape)
    for i in range(g.dim):
        k = 2 * np.pi * np.fft.fftfreq(g.n, d=g.dx[i])
        shape = [1] * g.dim
        shape[i] = g.n
        xi2 = xi2 + k.reshape(shape) ** 2
    return float(np.sqrt(np.sum((1.0 + xi2) ** s * power)))


def support_envelope(field: ForceField, support: Rectangle, times: Iterable[float], cfg: IntegratorConfig, margin: float = 0.05, samples_per_axis: int = 5) -> Rectangle:
    """Bounding box of the forward images of ``support`` at the given times.

    For affine fields the box corners are enough (images of a box are convex
    hulls of the corner images); otherwise a sample lattice is pushed forward.
    """
    m = support.dim
    if field.affine is not None:
        bits = (np.arange(2**m)[:, None] >> np.arange(m)) & 1
        pts = np.where(bits == 1, support.hi, support.lo)
    else:
        axes = [np.linspace(a, b, samples_per_axis) for a, b in zip(support.lo, support.hi)]
        pts = np.stack([q.ravel() for q in np.meshgrid(*axes, indexing="ij")], axis=-1)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    for t in times:
        img = flow_points(field, pts, float(t), cfg.with_safety(None))
        lo = np.minimum(lo, img.min(axis=0))
        hi = np.maximum(hi, img.max(axis=0))
    return Rectangle(lo - margin, hi + margin)


def cubic_grid_around(box: Rectangle, nx: int, nv: int) -> PhaseGrid:
    """Grid with cubic x and v windows covering a phase box."""
    xw, vw = box.split()
    return PhaseGrid(
        Rectangle.cube(xw.lo.min(), xw.hi.max(), xw.dim),
        Rectangle.cube(vw.lo.min(), vw.hi.max(), vw.dim),
        nx,
        nv,
    )
