"""Characteristics of v.grad_x + F.grad_v: the flow Z(t) = (X, V) of x' = v, v' = F(x, v).

Integration is fixed-step classical RK4 on batches of points. Backward
characteristics are the same ODE integrated with negative time. For affine
fields the RK4 step is an affine map of the state, so a whole batch can be
moved with one precomputed (2d+1)x(2d+1) homogeneous matrix; this gives the
same numbers as stepping each point, up to roundoff.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, EscapeError
from .fields import ForceField
from .grid import Rectangle


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if x.shape != v.shape or x.ndim != 1:
            raise ValueError("x and v must be vectors of equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ValueError("phase point coordinates must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def dim(self) -> int:
        return self.x.size

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.v])

    @classmethod
    def from_array(cls, z) -> "PhasePoint":
        z = np.asarray(z, dtype=float)
        d = z.size // 2
        return cls(z[:d], z[d:])


@dataclass(frozen=True)
class VariationalState:
    """Flow point plus the sensitivity blocks jx = dX/dv0 and jv = dV/dv0."""

    z: PhasePoint
    jx: np.ndarray
    jv: np.ndarray


@dataclass(frozen=True)
class IntegratorConfig:
    step: float = 1e-3
    scheme: str = "RK4"
    max_time: float = 100.0
    safety: Optional[Rectangle] = None

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError("integrator step must be positive")
        if self.scheme.upper() != "RK4":
            raise ConfigError(f"unsupported scheme {self.scheme!r}; only RK4 is available")
        if not self.max_time > 0:
            raise ConfigError("max_time must be positive")

    def with_safety(self, safety: Optional[Rectangle]) -> "IntegratorConfig":
        return IntegratorConfig(self.step, self.scheme, self.max_time, safety)


def n_steps(t: float, h: float) -> tuple[int, float]:
    """Number of steps and signed step length hitting ``t`` exactly."""
    if t == 0:
        return 0, 0.0
    n = max(1, math.ceil(abs(t) / h - 1e-9))
    return n, t / n


def _check_time(t: float, cfg: IntegratorConfig) -> None:
    if abs(t) > cfg.max_time:
        raise ConfigError(f"|t|={abs(t)} exceeds max_time={cfg.max_time}")


def _rk4(rhs, y, t, h, check=None):
    n, dt = n_steps(t, h)
    for k in range(n):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if check is not None:
            check(y, (k + 1) * dt)
    return y


def _escape_check(safety: Optional[Rectangle], d: int):
    if safety is None:
        return None

    def check(y, t):
        if not np.all(safety.contains(y[..., : 2 * d])):
            raise EscapeError(t)

    return check


def _flow_rhs(field: ForceField):
    d = field.dim

    def rhs(y):
        x, v = y[..., :d], y[..., d:]
        return np.concatenate([v, field.eval(x, v)], axis=-1)

    return rhs


def _generator(field: ForceField) -> tuple[np.ndarray, np.ndarray]:
    """Matrix K and offset b with b(z) = K z + b for an affine field."""
    Kx, Kv, c = field.affine
    d = field.dim
    K = np.zeros((2 * d, 2 * d))
    K[:d, d:] = np.eye(d)
    K[d:, :d] = Kx
    K[d:, d:] = Kv
    return K, np.concatenate([np.zeros(d), c])


def rk4_step_matrix(field: ForceField, dt: float) -> np.ndarray:
    """Homogeneous (2d+1)x(2d+1) matrix of one RK4 step for an affine field."""
    K, b = _generator(field)
    m = K.shape[0]
    G = np.zeros((m + 1, m + 1))
    G[:m, :m] = K
    G[:m, m] = b
    # RK4 on an autonomous linear system is the degree-4 Taylor polynomial
    S = np.eye(m + 1)
    term = np.eye(m + 1)
    for k in range(1, 5):
        term = term @ G * (dt / k)
        S = S + term
    return S


def propagator(field: ForceField, t: float, cfg: IntegratorConfig) -> np.ndarray:
    """Homogeneous matrix H with [Z(t); 1] = H [z; 1] under RK4, for affine fields."""
    if field.affine is None:
        raise ValueError("propagator requires an affine field")
    n, dt = n_steps(t, cfg.step)
    m = 2 * field.dim + 1
    if n == 0:
        return np.eye(m)
    return np.linalg.matrix_power(rk4_step_matrix(field, dt), n)


def apply_homogeneous(H: np.ndarray, z: np.ndarray) -> np.ndarray:
    m = H.shape[0] - 1
    return z @ H[:m, :m].T + H[:m, m]


def flow_points(field: ForceField, z, t: float, cfg: IntegratorConfig, chunk: int = 1 << 18) -> np.ndarray:
    """Z(t; z) for a batch of phase points ``z`` of shape ``(N, 2d)``."""
    _check_time(t, cfg)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    d = field.dim
    check = _escape_check(cfg.safety, d)
    if field.affine is not None:
        n, dt = n_steps(t, cfg.step)
        if check is None:
            return apply_homogeneous(propagator(field, t, cfg), z)
        S = rk4_step_matrix(field, dt)
        y = z
        for k in range(n):
            y = apply_homogeneous(S, y)
            check(y, (k + 1) * dt)
        return y
    rhs = _flow_rhs(field)
    out = np.empty_like(z)
    for i in range(0, len(z), chunk):
        out[i : i + chunk] = _rk4(rhs, z[i : i + chunk], t, cfg.step, check)
    return out


def integrate_flow(field: ForceField, z0: PhasePoint, t: float, cfg: IntegratorConfig) -> PhasePoint:
    """Z(t; x0, v0) by fixed-step RK4; negative ``t`` integrates backward."""
    _check_time(t, cfg)
    y = _rk4(_flow_rhs(field), z0.as_array()[None, :], t, cfg.step, _escape_check(cfg.safety, field.dim))
    return PhasePoint.from_array(y[0])


def trajectory(field: ForceField, z0: PhasePoint, times, cfg: IntegratorConfig) -> np.ndarray:
    """Rows ``(t, x..., v...)`` at the requested times (monotone from 0)."""
    times = np.asarray(list(times), dtype=float)
    rows = []
    y = z0.as_array()[None, :]
    prev = 0.0
    rhs = _flow_rhs(field)
    check = _escape_check(cfg.safety, field.dim)
    for t in times:
        _check_time(t, cfg)
        y = _rk4(rhs, y, t - prev, cfg.step, None if check is None else (lambda yy, s, p=prev: check(yy, p + s)))
        prev = t
        rows.append(np.concatenate([[t], y[0]]))
    return np.array(rows)


def _variational_rhs(field: ForceField):
    d = field.dim

    def rhs(y):
        x, v = y[..., :d], y[..., d : 2 * d]
        jx = y[..., 2 * d : 2 * d + d * d].reshape(y.shape[:-1] + (d, d))
        jv = y[..., 2 * d + d * d :].reshape(y.shape[:-1] + (d, d))
        djv = field.jacobian_x(x, v) @ jx
        if field.velocity_dependent:
            djv = djv + field.jacobian_v(x, v) @ jv
        parts = [v, field.eval(x, v), jv.reshape(y.shape[:-1] + (d * d,)), djv.reshape(y.shape[:-1] + (d * d,))]
        return np.concatenate(parts, axis=-1)

    return rhs


def integrate_variational_batch(field: ForceField, z, t: float, cfg: IntegratorConfig):
    """Flow and (jx, jv) blocks for a batch ``z`` of shape ``(N, 2d)``.

    jx(0) = 0 and jv(0) = I; with ``t < 0`` jx is dX(-|t|)/dv directly.
    """
    _check_time(t, cfg)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    d = field.dim
    N = len(z)
    eye = np.broadcast_to(np.eye(d).ravel(), (N, d * d))
    y0 = np.concatenate([z, np.zeros((N, d * d)), eye], axis=-1)
    y = _rk4(_variational_rhs(field), y0, t, cfg.step, _escape_check(cfg.safety, d))
    jx = y[:, 2 * d : 2 * d + d * d].reshape(N, d, d)
    jv = y[:, 2 * d + d * d :].reshape(N, d, d)
    return y[:, : 2 * d], jx, jv


def integrate_variational(field: ForceField, z0: PhasePoint, t: float, cfg: IntegratorConfig) -> VariationalState:
    z, jx, jv = integrate_variational_batch(field, z0.as_array()[None, :], t, cfg)
    return VariationalState(PhasePoint.from_array(z[0]), jx[0], jv[0])


def monodromy(field: ForceField, z0: PhasePoint, t: float, cfg: IntegratorConfig) -> np.ndarray:
    """Full 2d x 2d derivative of the flow map at ``z0``."""
    _check_time(t, cfg)
    d = field.dim
    m = 2 * d

    def rhs(y):
        x, v = y[..., :d], y[..., d:m]
        Y = y[..., m:].reshape(m, m)
        D = np.zeros((m, m))
        D[:d, d:] = np.eye(d)
        D[d:, :d] = field.jacobian_x(x, v)[0]
        if field.velocity_dependent:
            D[d:, d:] = field.jacobian_v(x, v)[0]
        return np.concatenate([v, field.eval(x, v), (D @ Y).reshape(1, m * m)], axis=-1)

    y0 = np.concatenate([z0.as_array(), np.eye(m).ravel()])[None, :]
    y = _rk4(rhs, y0, t, cfg.step, _escape_check(cfg.safety, d))
    return y[0, m:].reshape(m, m)


def volume_defect(field: ForceField, z0: PhasePoint, t: float, cfg: IntegratorConfig) -> float:
    """|det DZ(t) - 1|; zero for the exact (divergence-free) flow."""
    return float(abs(np.linalg.det(monodromy(field, z0, t, cfg)) - 1.0))


def group_defect(field: ForceField, z0: PhasePoint, t: float, s: float, cfg: IntegratorConfig) -> float:
    """|Z(t+s; z0) - Z(t; Z(s; z0))| in the Euclidean norm on R^{2d}."""
    direct = integrate_flow(field, z0, t + s, cfg)
    composed = integrate_flow(field, integrate_flow(field, z0, s, cfg), t, cfg)
    return float(np.linalg.norm(direct.as_array() - composed.as_array()))


CLOSED_FORM_KINDS = ("Zero", "Repulsive", "Harmonic")


def closed_form_flow(kind: str, z0: PhasePoint, t: float) -> PhasePoint:
    """Exact flows of the componentwise built-in fields."""
    x, v = z0.x, z0.v
    k = str(kind).lower()
    if k == "zero":
        return PhasePoint(x + t * v, v)
    if k == "harmonic":
        c, s = math.cos(t), math.sin(t)
        return PhasePoint(x * c + v * s, -x * s + v * c)
    if k == "repulsive":
        c, s = math.cosh(t), math.sinh(t)
        return PhasePoint(x * c + v * s, x * s + v * c)
    raise ConfigError(f"no closed-form flow for kind {kind!r}")


def default_safety_window(field: ForceField, window: Rectangle, t: float, iterations: int = 4, piece: float = 0.25) -> Rectangle:
    """Phase window inflated by the excursion a trajectory can make in time |t|.

    Over a piece of length dt, x is inflated by dt v_max and v by dt F_max,
    with v_max and F_max taken over the inflated window itself (a few
    fixed-point passes, which settle because dt is short). Pieces are chained
    so long horizons under growing fields get an exponential envelope. For
    affine fields the corner maxima are exact.
    """
    d = field.dim
    t = abs(float(t))
    n_axis = 2 if field.affine is not None else (9 if d == 1 else 5)
    n_pieces = max(1, math.ceil(t / piece))
    dt = t / n_pieces
    for _ in range(n_pieces):
        r_x = r_v = 0.0
        for _ in range(iterations):
            reach = window.inflate(np.concatenate([np.full(d, r_x), np.full(d, r_v)]))
            axes = [np.linspace(a, b, n_axis) for a, b in zip(reach.lo, reach.hi)]
            pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
            v_max = float(np.max(np.abs(pts[:, d:])))
            F_max = float(np.max(np.abs(field.eval(pts[:, :d], pts[:, d:])), initial=0.0))
            r_x, r_v = dt * (v_max + dt * F_max), dt * F_max
        window = window.inflate(np.concatenate([np.full(d, r_x), np.full(d, r_v)]))
    return window


def read_points_csv(path, dim: int) -> np.ndarray:
    """Initial points, one row ``x1..xd, v1..vd`` per line; a header row is skipped."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                if rows:
                    raise ConfigError(f"{path}: non-numeric row {row!r}")
                continue
            if len(vals) != 2 * dim:
                raise ConfigError(f"{path}: expected {2 * dim} columns, found {len(vals)}")
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, 2 * dim)


def write_trajectory_csv(path, rows: np.ndarray, dim: int) -> None:
    cols = ["t"] + [f"x{i + 1}" for i in range(dim)] + [f"v{i + 1}" for i in range(dim)]
    np.savetxt(path, rows, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def backward_feet(field: ForceField, z, times: Iterable[float], cfg: IntegratorConfig):
    """Yield Z(-s; z) for increasing nonnegative ``times``, integrating incrementally."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    prev = 0.0
    y = z
    for s in times:
        s = float(s)
        if s < prev:
            raise ValueError("times must be nondecreasing")
        _check_time(s, cfg)
        if field.affine is not None:
            y = flow_points(field, z, -s, cfg)
        else:
            sub = IntegratorConfig(cfg.step, cfg.scheme, cfg.max_time + s, cfg.safety)
            y = flow_points(field, y, -(s - prev), sub) if s > prev else y
        prev = s
        yield y
