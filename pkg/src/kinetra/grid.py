"""Rectangles, uniform cell-centred phase grids and the functions living on them.

Layout convention: a phase grid function in dimension ``d`` stores its values
as an array of shape ``(nx,) * d + (nv,) * d`` in row-major order, so the
x-axes are outermost. All integrals are midpoint Riemann sums.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True, eq=False)
class Rectangle:
    """Closed axis-aligned box ``prod_i [lo_i, hi_i]``. Bounds may be infinite."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigError(f"rectangle bounds have mismatched shapes {lo.shape}, {hi.shape}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(hi < lo):
            raise ConfigError(f"degenerate rectangle lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Rectangle):
            return NotImplemented
        return bool(np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi))

    def __hash__(self) -> int:
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "Rectangle":
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @classmethod
    def whole(cls, dim: int) -> "Rectangle":
        return cls.cube(-np.inf, np.inf, dim)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def lengths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.all((points >= self.lo) & (points <= self.hi), axis=-1)

    def inflate(self, r) -> "Rectangle":
        return Rectangle(self.lo - r, self.hi + r)

    def product(self, other: "Rectangle") -> "Rectangle":
        return Rectangle(np.concatenate([self.lo, other.lo]), np.concatenate([self.hi, other.hi]))

    def split(self) -> tuple["Rectangle", "Rectangle"]:
        """Split a phase rectangle of dimension 2d into its x and v factors."""
        if self.dim % 2:
            raise ConfigError("only even-dimensional rectangles split into (x, v)")
        d = self.dim // 2
        return Rectangle(self.lo[:d], self.hi[:d]), Rectangle(self.lo[d:], self.hi[d:])

    def hull(self, other: "Rectangle") -> "Rectangle":
        return Rectangle(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def to_json(self) -> list:
        return [[float(a), float(b)] for a, b in zip(self.lo, self.hi)]

    @classmethod
    def from_json(cls, obj) -> "Rectangle":
        arr = np.asarray(obj, dtype=float)
        if arr.ndim == 1 and arr.size == 2:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ConfigError(f"cannot read rectangle from {obj!r}")
        return cls(arr[:, 0], arr[:, 1])


def _centers(lo: float, hi: float, n: int) -> np.ndarray:
    h = (hi - lo) / n
    return lo + (np.arange(n) + 0.5) * h


def _tensor_nodes(window: Rectangle, n: int) -> np.ndarray:
    axes = [_centers(a, b, n) for a, b in zip(window.lo, window.hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform cell-centred tensor grid on ``x_window x v_window``."""

    x_window: Rectangle
    v_window: Rectangle
    nx: int
    nv: int

    def __post_init__(self):
        if self.x_window.dim != self.v_window.dim:
            raise ConfigError("x and v windows must share the dimension")
        if self.nx < 1 or self.nv < 1:
            raise ConfigError("grid sizes must be positive")
        for w in (self.x_window, self.v_window):
            if not np.all(np.isfinite(w.lo) & np.isfinite(w.hi)) or np.any(w.lengths <= 0):
                raise ConfigError("grid windows must be finite and nondegenerate")

    @classmethod
    def cubic(cls, dim: int, x_range, v_range, nx: int, nv: int) -> "PhaseGrid":
        return cls(Rectangle.cube(*x_range, dim), Rectangle.cube(*v_range, dim), int(nx), int(nv))

    @property
    def dim(self) -> int:
        return self.x_window.dim

    @property
    def window(self) -> Rectangle:
        return self.x_window.product(self.v_window)

    @property
    def dx(self) -> np.ndarray:
        return self.x_window.lengths / self.nx

    @property
    def dv(self) -> np.ndarray:
        return self.v_window.lengths / self.nv

    @property
    def cell_volume_x(self) -> float:
        return float(np.prod(self.dx))

    @property
    def cell_volume_v(self) -> float:
        return float(np.prod(self.dv))

    @property
    def shape(self) -> tuple:
        return (self.nx,) * self.dim + (self.nv,) * self.dim

    @property
    def n_x_nodes(self) -> int:
        return self.nx**self.dim

    @property
    def n_v_nodes(self) -> int:
        return self.nv**self.dim

    def x_axis(self, i: int = 0) -> np.ndarray:
        return _centers(self.x_window.lo[i], self.x_window.hi[i], self.nx)

    def v_axis(self, i: int = 0) -> np.ndarray:
        return _centers(self.v_window.lo[i], self.v_window.hi[i], self.nv)

    def x_nodes(self) -> np.ndarray:
        """x cell centres, shape ``(nx**d, d)``, row-major."""
        return _tensor_nodes(self.x_window, self.nx)

    def v_nodes(self) -> np.ndarray:
        return _tensor_nodes(self.v_window, self.nv)

    def x_grid(self) -> "XGrid":
        return XGrid(self.x_window, self.nx)

    def header(self) -> dict:
        return {
            "dim": self.dim,
            "window": {"x": self.x_window.to_json(), "v": self.v_window.to_json()},
            "nx": self.nx,
            "nv": self.nv,
        }

    @classmethod
    def from_header(cls, header: dict) -> "PhaseGrid":
        try:
            grid = cls(
                Rectangle.from_json(header["window"]["x"]),
                Rectangle.from_json(header["window"]["v"]),
                int(header["nx"]),
                int(header["nv"]),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed grid header: {exc}") from exc
        if grid.dim != int(header["dim"]):
            raise ConfigError("header dim does not match its window")
        return grid


@dataclass(frozen=True)
class XGrid:
    window: Rectangle
    n: int

    @property
    def dim(self) -> int:
        return self.window.dim

    @property
    def dx(self) -> np.ndarray:
        return self.window.lengths / self.n

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    def nodes(self) -> np.ndarray:
        return _tensor_nodes(self.window, self.n)

    def axis(self, i: int = 0) -> np.ndarray:
        return _centers(self.window.lo[i], self.window.hi[i], self.n)


@dataclass
class PhaseGridFunction:
    grid: PhaseGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def cell_volume_x(self) -> float:
        return self.grid.cell_volume_x

    @property
    def cell_volume_v(self) -> float:
        return self.grid.cell_volume_v

    @property
    def fibers(self) -> np.ndarray:
        """Values as ``(n_x_nodes, n_v_nodes)``: one row per x-node."""
        return self.values.reshape(self.grid.n_x_nodes, self.grid.n_v_nodes)

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume_x * self.cell_volume_v)

    def integrate(self, other: Optional["PhaseGridFunction"] = None) -> float:
        vals = self.values if other is None else self.values * other.values
        return float(vals.sum() * self.cell_volume_x * self.cell_volume_v)

    def with_values(self, values) -> "PhaseGridFunction":
        return PhaseGridFunction(self.grid, values)

    # serialisation: one JSON header line, then row-major values

    def save(self, path, fmt: Optional[str] = None) -> None:
        path = Path(path)
        fmt = fmt or ("csv" if path.suffix == ".csv" else "bin")
        header = json.dumps(self.grid.header(), sort_keys=True)
        if fmt == "csv":
            with open(path, "w") as fh:
                fh.write("# " + header + "\n")
                np.savetxt(fh, self.values.ravel(), fmt="%.17g")
        elif fmt == "bin":
            with open(path, "wb") as fh:
                fh.write(header.encode() + b"\n")
                fh.write(self.values.astype("<f8").tobytes(order="C"))
        else:
            raise ConfigError(f"unknown grid format {fmt!r}")

    @classmethod
    def load(cls, path) -> "PhaseGridFunction":
        path = Path(path)
        with open(path, "rb") as fh:
            first = fh.readline().decode()
            if first.startswith("# "):
                grid = PhaseGrid.from_header(json.loads(first[2:]))
                values = np.loadtxt(fh, dtype=float, ndmin=1)
            else:
                grid = PhaseGrid.from_header(json.loads(first))
                values = np.frombuffer(fh.read(), dtype="<f8")
        if values.size != int(np.prod(grid.shape)):
            raise ConfigError(f"{path}: expected {np.prod(grid.shape)} values, found {values.size}")
        return cls(grid, values)


@dataclass
class XGridFunction:
    """A function of x alone on a cell-centred grid, e.g. a velocity moment."""

    grid: XGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    def l1(self) -> float:
        return float(np.abs(self.values).sum() * self.grid.cell_volume)

    def l2(self) -> float:
        return float(np.sqrt((self.values**2).sum() * self.grid.cell_volume))

    def to_csv(self, path) -> None:
        nodes = self.grid.nodes()
        cols = [f"x{i + 1}" for i in range(self.grid.dim)] + ["value"]
        data = np.column_stack([nodes, self.values.ravel()])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


Func = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class InitialData:
    """Phase-space data ``f(x, v)`` given by a vectorised callable.

    ``func`` maps arrays ``x, v`` of shape ``(..., d)`` to values of shape
    ``(...)``. Evaluation is forced to zero outside ``support``. ``grad``,
    when present, returns ``(grad_x, grad_v)`` with the shape of ``x``.
    """

    func: Func
    support: Rectangle
    grad: Optional[Callable] = None
    sup_norm: Optional[float] = None
    binary: bool = False
    # set for plain box indicators; lets affine transport skip generic evaluation
    box: Optional[Rectangle] = None

    @property
    def dim(self) -> int:
        return self.support.dim // 2

    def eval(self, x, v) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        z = np.concatenate([x, v], axis=-1)
        inside = self.support.contains(z)
        return np.where(inside, self.func(x, v), 0.0)

    def eval_z(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        d = z.shape[-1] // 2
        return self.eval(z[..., :d], z[..., d:])

    def on_grid(self, grid: PhaseGrid) -> PhaseGridFunction:
        x = grid.x_nodes()[:, None, :]
        v = grid.v_nodes()[None, :, :]
        x, v = np.broadcast_arrays(x, v)
        return PhaseGridFunction(grid, self.eval(x, v))

    def grad_on_grid(self, grid: PhaseGrid) -> tuple[np.ndarray, np.ndarray]:
        if self.grad is None:
            raise ValueError("this initial datum has no analytic gradient")
        x = grid.x_nodes()[:, None, :]
        v = grid.v_nodes()[None, :, :]
        x, v = np.broadcast_arrays(x, v)
        gx, gv = self.grad(x, v)
        inside = self.support.contains(np.concatenate([x, v], axis=-1))[..., None]
        return np.where(inside, gx, 0.0), np.where(inside, gv, 0.0)

    # constructors

    @classmethod
    def indicator(cls, x_box: Rectangle, v_box: Optional[Rectangle] = None) -> "InitialData":
        """Indicator of ``x_box x v_box`` (``v_box=None``: all velocities)."""
        v_box = v_box if v_box is not None else Rectangle.whole(x_box.dim)
        support = x_box.product(v_box)
        return cls(lambda x, v: np.ones(np.shape(x)[:-1]), support, sup_norm=1.0, binary=True, box=support)

    @classmethod
    def constant(cls, value: float, support: Rectangle) -> "InitialData":
        return cls(
            lambda x, v: np.full(np.shape(x)[:-1], float(value)),
            support,
            grad=lambda x, v: (np.zeros_like(x), np.zeros_like(v)),
            sup_norm=abs(float(value)),
        )

    @classmethod
    def bump(cls, x_center, v_center, radius: float, amplitude: float = 1.0) -> "InitialData":
        """Smooth bump ``A exp(1 - 1/(1 - r^2))`` on the phase ball of given radius."""
        xc = np.atleast_1d(np.asarray(x_center, dtype=float))
        vc = np.atleast_1d(np.asarray(v_center, dtype=float))
        R = float(radius)

        def r2(x, v):
            return (np.sum((x - xc) ** 2, axis=-1) + np.sum((v - vc) ** 2, axis=-1)) / R**2

        def func(x, v):
            s = r2(x, v)
            out = np.zeros_like(s)
            m = s < 1.0
            out[m] = amplitude * np.exp(1.0 - 1.0 / (1.0 - s[m]))
            return out

        def grad(x, v):
            s = r2(x, v)
            phi = np.zeros_like(s)
            m = s < 1.0
            # d/ds exp(1 - 1/(1-s)) = -exp(...) / (1-s)^2
            phi[m] = -amplitude * np.exp(1.0 - 1.0 / (1.0 - s[m])) / (1.0 - s[m]) ** 2
            scale = (2.0 / R**2) * phi[..., None]
            return scale * (x - xc), scale * (v - vc)

        support = Rectangle(np.concatenate([xc - R, vc - R]), np.concatenate([xc + R, vc + R]))
        return cls(func, support, grad=grad, sup_norm=abs(amplitude))

    @classmethod
    def from_grid(cls, f: PhaseGridFunction) -> "InitialData":
        """Nearest-cell lookup of a stored grid function."""
        g = f.grid
        lo = g.window.lo
        h = np.concatenate([g.dx, g.dv])
        n = np.array([g.nx] * g.dim + [g.nv] * g.dim)

        def func(x, v):
            z = np.concatenate([x, v], axis=-1)
            idx = np.clip(np.floor((z - lo) / h).astype(int), 0, n - 1)
            return f.values[tuple(np.moveaxis(idx, -1, 0))]

        return cls(func, g.window, sup_norm=float(np.abs(f.values).max(initial=0.0)))


@dataclass
class TestFunction:
    """Velocity weight ``psi(v)`` with ``supp psi`` inside the ball of ``support_radius``."""

    __test__ = False  # not a pytest class

    func: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    support_radius: float

    def eval(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        inside = np.linalg.norm(v, axis=-1) <= self.support_radius
        return np.where(inside, self.func(v), 0.0)

    def eval_grad(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        inside = (np.linalg.norm(v, axis=-1) <= self.support_radius)[..., None]
        return np.where(inside, self.grad(v), 0.0)

    @classmethod
    def smooth_bump(cls, radius: float) -> "TestFunction":
        R = float(radius)

        def func(v):
            s = np.sum(v**2, axis=-1) / R**2
            out = np.zeros_like(s)
            m = s < 1
            out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m]))
            return out

        def grad(v):
            s = np.sum(v**2, axis=-1) / R**2
            phi = np.zeros_like(s)
            m = s < 1
            phi[m] = -np.exp(1.0 - 1.0 / (1.0 - s[m])) / (1.0 - s[m]) ** 2
            return (2.0 / R**2) * phi[..., None] * v

        return cls(func, grad, R)

    @classmethod
    def from_callable(cls, func, support_radius: float, grad=None, h: float = 1e-5) -> "TestFunction":
        if grad is None:

            def grad(v):
                v = np.asarray(v, dtype=float)
                out = np.empty_like(v)
                for i in range(v.shape[-1]):
                    e = np.zeros(v.shape[-1])
                    e[i] = h
                    out[..., i] = (func(v + e) - func(v - e)) / (2 * h)
                return out

        return cls(func, grad, float(support_radius))
