"""Force fields F(x) or F(x, v), their Jacobians and Lipschitz constants.

All callables are vectorised: positions and velocities are arrays of shape
``(..., d)``; Jacobians have shape ``(..., d, d)`` with ``J[..., i, j] =
dF_i / dz_j``. Matrix norms are the max absolute entry throughout.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .grid import Rectangle

H_FD = 1e-5

BUILTIN_KINDS = ("Zero", "Repulsive", "Harmonic", "Magnetic2D", "Magnetic3D")


def max_entry_norm(a) -> np.ndarray:
    """Max absolute entry over the last two axes."""
    return np.max(np.abs(a), axis=(-2, -1))


@dataclass(frozen=True)
class ForceField:
    dim: int
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_x: Optional[Callable] = None
    jac_v: Optional[Callable] = None
    lipschitz_bound: Optional[float] = None
    lipschitz_v: Optional[float] = None
    velocity_dependent: bool = False
    # (Kx, Kv, c) with F = Kx x + Kv v + c, when the field is affine
    affine: Optional[tuple] = None
    kind: str = "Custom"
    h_fd: float = H_FD

    def eval(self, x, v=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = np.zeros_like(x) if v is None else np.asarray(v, dtype=float)
        return np.asarray(self.func(x, v), dtype=float)

    def jacobian_x(self, x, v=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = np.zeros_like(x) if v is None else np.asarray(v, dtype=float)
        if self.jac_x is not None:
            return np.asarray(self.jac_x(x, v), dtype=float)
        return _central_jacobian(lambda y: self.func(y, v), x, self.h_fd)

    def jacobian_v(self, x, v) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if not self.velocity_dependent:
            return np.zeros(np.broadcast_shapes(x.shape, v.shape) + (self.dim,))
        if self.jac_v is not None:
            return np.asarray(self.jac_v(x, v), dtype=float)
        return _central_jacobian(lambda w: self.func(x, w), v, self.h_fd)

    @property
    def analytic(self) -> bool:
        return self.jac_x is not None and (self.jac_v is not None or not self.velocity_dependent)

    @property
    def mixing_constant(self) -> float:
        """Constant entering the mixing-time equation.

        ``lipschitz_bound`` for x-only fields; for velocity-dependent fields the
        velocity Lipschitz constant is added, since rotation in v also shrinks
        the velocity-to-position Jacobian.
        """
        if self.lipschitz_bound is None:
            raise ConfigError("field has no Lipschitz bound; use estimate_lipschitz first")
        m = float(self.lipschitz_bound)
        if self.velocity_dependent:
            if self.lipschitz_v is None:
                raise ConfigError("velocity-dependent field has no velocity Lipschitz bound")
            m += float(self.lipschitz_v)
        return m

    def replace(self, **changes) -> "ForceField":
        return dataclasses.replace(self, **changes)


def _central_jacobian(fun, y, h) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        cols.append((np.asarray(fun(y + e)) - np.asarray(fun(y - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def affine_field(Kx, Kv=None, c=None, kind="Affine", lipschitz_bound=None) -> ForceField:
    """F(x, v) = Kx x + Kv v + c with exact Jacobians."""
    Kx = np.atleast_2d(np.asarray(Kx, dtype=float))
    d = Kx.shape[0]
    Kv = np.zeros((d, d)) if Kv is None else np.atleast_2d(np.asarray(Kv, dtype=float))
    c = np.zeros(d) if c is None else np.atleast_1d(np.asarray(c, dtype=float))
    vdep = bool(np.any(Kv != 0))

    def func(x, v):
        return x @ Kx.T + v @ Kv.T + c

    def jac_x(x, v):
        shape = np.broadcast_shapes(np.shape(x), np.shape(v))[:-1]
        return np.broadcast_to(Kx, shape + (d, d)).copy()

    def jac_v(x, v):
        shape = np.broadcast_shapes(np.shape(x), np.shape(v))[:-1]
        return np.broadcast_to(Kv, shape + (d, d)).copy()

    return ForceField(
        dim=d,
        func=func,
        jac_x=jac_x,
        jac_v=jac_v,
        lipschitz_bound=float(np.abs(Kx).max()) if lipschitz_bound is None else lipschitz_bound,
        lipschitz_v=float(np.abs(Kv).max()),
        velocity_dependent=vdep,
        affine=(Kx, Kv, c),
        kind=kind,
    )


def _cross_matrix(B) -> np.ndarray:
    """Matrix K with K v = v x B."""
    b1, b2, b3 = B
    return np.array([[0.0, b3, -b2], [-b3, 0.0, b1], [b2, -b1, 0.0]])


def make_builtin(kind: str, dim: int, params: Optional[dict] = None) -> ForceField:
    """Built-in analytic fields.

    Zero: F = 0. Repulsive: F(x) = x. Harmonic: F(x) = -x.
    Magnetic2D: F = (B v2, -B v1), scalar ``B`` (default 1).
    Magnetic3D: F = v x B for a constant vector ``B`` (required).
    """
    params = dict(params or {})
    names = {k.lower(): k for k in BUILTIN_KINDS}
    key = names.get(str(kind).lower())
    if key is None:
        raise ConfigError(f"unknown field kind {kind!r}; expected one of {BUILTIN_KINDS}")
    if int(dim) < 1:
        raise ConfigError("dimension must be at least 1")
    d = int(dim)
    eye, zero = np.eye(d), np.zeros((d, d))
    if key == "Zero":
        return affine_field(zero, kind=key)
    if key == "Repulsive":
        return affine_field(eye, kind=key)
    if key == "Harmonic":
        return affine_field(-eye, kind=key)
    if key == "Magnetic2D":
        if d != 2:
            raise ConfigError("Magnetic2D requires dim=2")
        B = float(params.get("B", 1.0))
        return affine_field(zero, np.array([[0.0, B], [-B, 0.0]]), kind=key)
    if d != 3:
        raise ConfigError("Magnetic3D requires dim=3")
    if "B" not in params:
        raise ConfigError("Magnetic3D requires a constant vector parameter B")
    B = np.asarray(params["B"], dtype=float)
    if B.shape != (3,):
        raise ConfigError("Magnetic3D parameter B must have three components")
    return affine_field(zero, _cross_matrix(B), kind=key)


@dataclass(frozen=True)
class DivergenceReport:
    max_abs_div: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_div <= self.tolerance


def check_divergence_free_v(field: ForceField, sample_points) -> DivergenceReport:
    """Largest ``|trace grad_v F|`` over sample phase points of shape ``(n, 2d)``."""
    tol = 1e-10 if field.analytic else 10.0 * field.h_fd
    if not field.velocity_dependent:
        return DivergenceReport(0.0, tol)
    z = np.atleast_2d(np.asarray(sample_points, dtype=float))
    d = field.dim
    J = field.jacobian_v(z[:, :d], z[:, d:])
    div = np.trace(J, axis1=-2, axis2=-1)
    return DivergenceReport(float(np.max(np.abs(div), initial=0.0)), tol)


@dataclass(frozen=True)
class LipschitzEstimate:
    """Sampled lower estimate of ``sup |grad F|`` (max-entry norm)."""

    value: float
    n_per_axis: int
    n_points: int

    def __float__(self) -> float:
        return self.value


def estimate_lipschitz(field: ForceField, window: Rectangle, n_samples: int = 1001, wrt: str = "x") -> LipschitzEstimate:
    """Max of the Jacobian's max-entry norm over a uniform sample grid.

    ``window`` is either an x-window (dimension d; velocities set to 0) or a
    phase window (dimension 2d). ``n_samples`` is the total sample budget;
    the grid includes the window corners.
    """
    d = field.dim
    if window.dim not in (d, 2 * d):
        raise ConfigError(f"window of dimension {window.dim} does not fit a field in d={d}")
    if not np.all(np.isfinite(window.lo) & np.isfinite(window.hi)):
        raise ConfigError("Lipschitz estimation needs a bounded window")
    k = window.dim
    n_axis = max(2, int(round(n_samples ** (1.0 / k))))
    axes = [np.linspace(a, b, n_axis) for a, b in zip(window.lo, window.hi)]
    pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    x = pts[:, :d]
    v = pts[:, d:] if k == 2 * d else np.zeros_like(x)
    J = field.jacobian_x(x, v) if wrt == "x" else field.jacobian_v(x, v)
    return LipschitzEstimate(float(np.max(max_entry_norm(J), initial=0.0)), n_axis, len(pts))


def with_estimated_lipschitz(field: ForceField, window: Rectangle, n_samples: int = 4096) -> ForceField:
    """Fill in missing Lipschitz bounds by sampling over ``window``."""
    changes = {}
    if field.lipschitz_bound is None:
        changes["lipschitz_bound"] = estimate_lipschitz(field, window, n_samples).value
    if field.velocity_dependent and field.lipschitz_v is None:
        changes["lipschitz_v"] = estimate_lipschitz(field, window, n_samples, wrt="v").value
    return field.replace(**changes) if changes else field


def custom_field(func, dim: int, jac_x=None, jac_v=None, velocity_dependent=False, lipschitz_bound=None) -> ForceField:
    return ForceField(
        dim=int(dim),
        func=func,
        jac_x=jac_x,
        jac_v=jac_v,
        lipschitz_bound=lipschitz_bound,
        velocity_dependent=velocity_dependent,
    )
