"""Run configuration: one JSON document, all defaults in one place.

Every report carries ``RunConfig.to_json()`` so a run can be reproduced from
its output alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np

from .dispersion import default_times, mixing_time_lower_bound
from .errors import ConfigError
from .fields import ForceField, make_builtin
from .flow import IntegratorConfig
from .grid import InitialData, PhaseGrid, Rectangle, TestFunction
from .transport import cubic_grid_around, support_envelope


@dataclass
class FieldSpec:
    kind: str = "Zero"
    dim: int = 1
    params: dict = dc_field(default_factory=dict)
    # overrides the analytic bound; understating it is how broken fixtures are made
    lipschitz: Optional[float] = None
    lipschitz_v: Optional[float] = None

    def build(self) -> ForceField:
        f = make_builtin(self.kind, self.dim, self.params)
        changes = {}
        if self.lipschitz is not None:
            changes["lipschitz_bound"] = float(self.lipschitz)
        if self.lipschitz_v is not None:
            changes["lipschitz_v"] = float(self.lipschitz_v)
        return f.replace(**changes) if changes else f


@dataclass
class WindowSpec:
    x: tuple = (-1.0, 2.0)
    v: tuple = (-3.0, 3.0)

    def grid(self, dim: int, nx: int, nv: int) -> PhaseGrid:
        return PhaseGrid.cubic(dim, tuple(self.x), tuple(self.v), nx, nv)


@dataclass
class TimeSpec:
    """Either an explicit list or ``n`` log-spaced times up to min(T, t_cap)."""

    values: Optional[list] = None
    n: int = 32
    t_cap: float = 2.0
    lo_frac: float = 0.01

    def resolve(self, T: float) -> list:
        if self.values is not None:
            return [float(t) for t in self.values]
        return [float(t) for t in default_times(T, self.n, self.t_cap, self.lo_frac)]


@dataclass
class Tolerances:
    tail_tol: float = 1e-8
    slack_coeff: float = 2.0
    bisection_tol: float = 1e-12
    duality: float = 1e-4
    resolvent_quad_step: float = 0.05


@dataclass
class DataSpec:
    """Initial datum: ``indicator`` of a box or a smooth ``bump``."""

    type: str = "indicator"
    x: tuple = (0.0, 1.0)
    v: tuple = (0.0, 1.0)
    center_x: Optional[list] = None
    center_v: Optional[list] = None
    radius: float = 0.5
    amplitude: float = 1.0

    def build(self, dim: int) -> InitialData:
        t = self.type.lower()
        if t == "indicator":
            return InitialData.indicator(Rectangle.cube(*self.x, dim), Rectangle.cube(*self.v, dim))
        if t == "bump":
            cx = self.center_x if self.center_x is not None else [0.5 * (self.x[0] + self.x[1])] * dim
            cv = self.center_v if self.center_v is not None else [0.5 * (self.v[0] + self.v[1])] * dim
            return InitialData.bump(cx, cv, self.radius, self.amplitude)
        raise ConfigError(f"unknown data type {self.type!r}")


@dataclass
class RunConfig:
    field: FieldSpec = dc_field(default_factory=FieldSpec)
    # None: cover the datum's support transported over all requested times
    window: Optional[WindowSpec] = None
    nx: int = 128
    nv: int = 128
    step: float = 1e-3
    times: TimeSpec = dc_field(default_factory=TimeSpec)
    tolerances: Tolerances = dc_field(default_factory=Tolerances)
    data: DataSpec = dc_field(default_factory=DataSpec)
    # flow: initial phase points (x..., v...) and the time grid of the trajectory
    points: list = dc_field(default_factory=lambda: [[0.0, 1.0]])
    t_final: float = 1.0
    n_out: int = 10
    # declared safety window for trajectories; leaving it is an escape
    safety: Optional[WindowSpec] = None
    # tau
    M: Optional[float] = None
    d: Optional[int] = None
    # resolvent
    lam: float = 1.0
    # moment / equi
    psi_radius: float = 2.0
    sobolev_s: float = 0.25
    alphas: list = dc_field(default_factory=lambda: [0.01, 0.05, 0.1, 0.2])
    epsilons: list = dc_field(default_factory=lambda: [0.25, 0.0625, 0.015625])
    slab_width: float = 0.05
    deltas: list = dc_field(default_factory=lambda: [0.05, 0.1, 0.2])
    # jacobian / det-lemma sampling
    n_samples: int = 100
    det_trials: int = 100000
    seed: int = 0
    format: str = "csv"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("nx", "nv", "n_out", "n_samples", "det_trials"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        for name in ("step", "lam", "psi_radius", "slab_width"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.window is None:
            return
        for lo, hi in (self.window.x, self.window.v):
            if not lo < hi:
                raise ConfigError("window bounds must satisfy lo < hi")
        if self.data.type.lower() == "indicator":
            if not (self.window.x[0] <= self.data.x[0] and self.data.x[1] <= self.window.x[1]):
                raise ConfigError("window does not contain the x-support of the datum")
            if not (self.window.v[0] <= self.data.v[0] and self.data.v[1] <= self.window.v[1]):
                raise ConfigError("window does not contain the v-support of the datum")

    @property
    def dim(self) -> int:
        return int(self.field.dim)

    def build_field(self) -> ForceField:
        return self.field.build()

    def grid(self, times=(), support: Optional[Rectangle] = None) -> PhaseGrid:
        """The configured window, or a cubic one around the transported support."""
        if self.window is not None:
            return self.window.grid(self.dim, self.nx, self.nv)
        support = self.data.build(self.dim).support if support is None else support
        box = support_envelope(self.build_field(), support, list(times), self.integrator())
        return cubic_grid_around(box, self.nx, self.nv)

    def sample_window(self) -> Rectangle:
        if self.window is not None:
            return Rectangle.cube(*self.window.x, self.dim).product(Rectangle.cube(*self.window.v, self.dim))
        return self.data.build(self.dim).support

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(step=self.step)

    def flow_integrator(self) -> IntegratorConfig:
        if self.safety is None:
            return self.integrator()
        d = self.dim
        box = Rectangle.cube(*self.safety.x, d).product(Rectangle.cube(*self.safety.v, d))
        return self.integrator().with_safety(box)

    def psi(self) -> TestFunction:
        return TestFunction.smooth_bump(self.psi_radius)

    def mixing_time(self) -> float:
        return mixing_time_lower_bound(self.build_field().mixing_constant, self.dim, self.tolerances.bisection_tol)

    def time_list(self) -> list:
        return self.times.resolve(self.mixing_time())

    def sample_points(self) -> np.ndarray:
        """Random phase points in the window, two velocities per x-node so
        injectivity margins can be measured."""
        rng = np.random.default_rng(self.seed)
        d = self.dim
        xw, vw = self.sample_window().split()
        half = (self.n_samples + 1) // 2
        xs = rng.uniform(xw.lo, xw.hi, size=(half, d))
        vs = rng.uniform(vw.lo, vw.hi, size=(2 * half, d))
        z = np.concatenate([np.repeat(xs, 2, axis=0), vs], axis=1)
        return z[: self.n_samples]

    def to_json(self) -> dict:
        out = asdict(self)
        return json.loads(json.dumps(out, default=_json_default))

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        raw = dict(raw)
        for key in ("window", "safety"):
            if key in raw and raw[key] is None:
                raw.pop(key)
        sub = {"field": FieldSpec, "window": WindowSpec, "safety": WindowSpec, "times": TimeSpec, "tolerances": Tolerances, "data": DataSpec}
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in raw.items():
            if key in sub:
                if key == "times" and isinstance(value, list):
                    value = {"values": value}
                if not isinstance(value, dict):
                    raise ConfigError(f"{key} must be an object")
                try:
                    kwargs[key] = sub[key](**value)
                except TypeError as exc:
                    raise ConfigError(f"bad {key} block: {exc}") from None
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc}") from None
        return cls.from_dict(raw)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, float) and math.isinf(o):
        return str(o)
    raise TypeError(type(o).__name__)
