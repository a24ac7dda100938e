"""Mixed norms and short-time mixing estimates for v.grad_x + F.grad_v.

The estimates checked here:

* ||f(t)||_{L^inf_x L^1_v} <= 2 |t|^{-d} ||f0||_{L^1_x L^inf_v} for 0 < t <= T,
  with T the positive root of (d!/3) M T^2 exp(M T^2 / 2) = 1;
* |det dX(-t)/dv|^{-1} <= 2 t^{-d} on the same range;
* ||dX(-t)/dv|| <= t exp(t^2 M / 2) (Gronwall envelope, max-entry norm);
* |X(-t; x, v') - X(-t; x, v)| >= (t/2) |v - v'| for t <= tau0;
* det(I + A) >= 1 - d! ||A|| for small ||A||.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erfi

from .errors import ConfigError
from .fields import ForceField, max_entry_norm
from .flow import IntegratorConfig, flow_points, integrate_variational_batch
from .grid import InitialData, PhaseGrid, PhaseGridFunction
from .transport import SafetySpec, DEFAULT_SAFETY, solve_cauchy


def norm_linf_l1(f: PhaseGridFunction) -> float:
    """max over x-nodes of sum_v |f| dv."""
    return float(np.max(np.abs(f.fibers).sum(axis=1)) * f.cell_volume_v)


def norm_l1_linf(f: PhaseGridFunction) -> float:
    """sum over x-nodes of max_v |f|, times dx."""
    return float(np.abs(f.fibers).max(axis=1).sum() * f.cell_volume_x)


def bisect_increasing(fn: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    """Root of an increasing function on [lo, hi] with fn(lo) <= 0 < fn(hi)."""
    if not fn(lo) <= 0 < fn(hi):
        raise ValueError("bisection bracket does not straddle the root")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fn(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _bracket(fn, tol):
    hi = 1.0
    while fn(hi) <= 0:
        hi *= 2.0
        if hi > 1e12:
            return math.inf
    return bisect_increasing(fn, 0.0, hi, tol)


def mixing_time_equation(M: float, d: int, T: float) -> float:
    """(d!/3) M T^2 exp(M T^2 / 2) - 1."""
    return math.factorial(d) / 3.0 * M * T * T * math.exp(M * T * T / 2.0) - 1.0


def mixing_time_lower_bound(M: float, d: int, tol: float = 1e-12) -> float:
    """Positive root T of the mixing-time equation; ``inf`` when M = 0."""
    if M < 0:
        raise ConfigError("Lipschitz constant must be nonnegative")
    if d < 1:
        raise ConfigError("dimension must be positive")
    if M == 0:
        return math.inf
    return _bracket(lambda T: mixing_time_equation(M, d, T), tol)


def injectivity_time(M: float, tol: float = 1e-12) -> float:
    """Largest tau0 with int_0^t (t - s) s e^{s^2 M/2} M ds <= t/2 for all t <= tau0.

    The integral equals int_0^t (e^{M s^2/2} - 1) ds, so the condition reads
    mean_{[0,t]} e^{M s^2/2} <= 3/2; the mean is increasing in t.
    """
    if M < 0:
        raise ConfigError("Lipschitz constant must be nonnegative")
    if M == 0:
        return math.inf
    c = math.sqrt(M / 2.0)

    def excess(t):
        if t == 0:
            return -0.5
        return math.sqrt(math.pi) / (2.0 * c) * float(erfi(c * t)) / t - 1.5

    return _bracket(excess, tol)


def sharp_constant(kind: str, t: float, d: int) -> Optional[float]:
    """Known exact dispersion factor (normalised by t^d) for the built-in flows."""
    k = str(kind).lower()
    if k == "zero":
        return 1.0
    if k == "harmonic":
        s = abs(math.sin(t))
        return math.inf if s == 0 else (t / s) ** d
    if k == "repulsive":
        return (2.0 * t / (math.exp(t) - math.exp(-t))) ** d
    return None


def default_times(T: float, n: int = 32, t_cap: float = 2.0, lo_frac: float = 0.01) -> np.ndarray:
    """n log-spaced times in [t_max / 100, t_max], t_max = min(T, t_cap)."""
    t_max = min(T, t_cap)
    return np.geomspace(lo_frac * t_max, t_max, n)


def _boundary_cells(mask: np.ndarray) -> int:
    """Cells in ``mask`` with an axis-neighbour outside it (grid edge counts as outside)."""
    if not mask.any():
        return 0
    padded = np.pad(mask, 1, constant_values=False)
    edge = np.zeros_like(mask)
    core = tuple(slice(1, -1) for _ in range(mask.ndim))
    for ax in range(mask.ndim):
        for shift in (-1, 1):
            edge |= ~np.roll(padded, shift, axis=ax)[core]
    return int(np.count_nonzero(mask & edge))


@dataclass
class MixingReport:
    kind: str
    dim: int
    tau_used: float
    q: float
    f0_norm: float
    times: list = dc_field(default_factory=list)
    measured_norm: list = dc_field(default_factory=list)
    bound: list = dc_field(default_factory=list)
    ratio: list = dc_field(default_factory=list)
    normalized: list = dc_field(default_factory=list)
    grid_slack: list = dc_field(default_factory=list)
    passes: list = dc_field(default_factory=list)
    in_regime: list = dc_field(default_factory=list)
    sharp_constant: list = dc_field(default_factory=list)
    sharp_slack: list = dc_field(default_factory=list)
    sharp_pass: list = dc_field(default_factory=list)

    @property
    def passed(self) -> bool:
        """All in-regime times satisfy the general and (when known) sharp bounds."""
        ok = True
        for p, r, sp in zip(self.passes, self.in_regime, self.sharp_pass):
            if r:
                ok &= bool(p) and sp is not False
        return ok

    @property
    def max_normalized(self) -> float:
        return max((n for n, r in zip(self.normalized, self.in_regime) if r), default=0.0)

    def rows(self) -> list:
        return [
            (t, m, b, r, p)
            for t, m, b, r, p in zip(self.times, self.measured_norm, self.bound, self.ratio, self.passes)
        ]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,measured,bound,ratio,pass,in_regime,grid_slack,sharp_constant,sharp_pass\n")
            for i, t in enumerate(self.times):
                sc = self.sharp_constant[i]
                fh.write(
                    f"{t:.17g},{self.measured_norm[i]:.17g},{self.bound[i]:.17g},{self.ratio[i]:.17g},"
                    f"{int(self.passes[i])},{int(self.in_regime[i])},{self.grid_slack[i]:.17g},"
                    f"{'' if sc is None else repr(float(sc))},{'' if self.sharp_pass[i] is None else int(self.sharp_pass[i])}\n"
                )

    def to_json(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def verify_dispersion(
    field: ForceField,
    f0: InitialData,
    times: Sequence[float],
    grid: PhaseGrid,
    cfg: IntegratorConfig,
    slack_coeff: float = 2.0,
    q: float = 2.0,
    tau: Optional[float] = None,
    safety: SafetySpec = DEFAULT_SAFETY,
) -> MixingReport:
    """Transport ``f0`` to each time and compare the mixed norms.

    The grid slack bounds the staircase error of the two Riemann sums:
    ``e1`` is (boundary cells of the maximising fibre) x dv-cell x sup|f|,
    ``e2`` the same for the x-support of ``max_v |f0|``; on the normalised
    scale ``n(t) = |f(t)| t^d / |f0|`` the allowance for a constant ``c`` is
    ``slack_coeff * (c e2 + e1 t^d) / |f0|``. ``pass`` compares the report's
    ratio ``measured / bound`` with ``1 + grid_slack`` (slack on that scale).
    The sup over x is taken over grid nodes only.
    """
    d = field.dim
    T = mixing_time_lower_bound(field.mixing_constant, d) if tau is None else tau
    g0 = solve_cauchy(field, f0, 0.0, grid, cfg, safety=None)
    N0 = norm_l1_linf(g0)
    if N0 == 0:
        raise ConfigError("initial datum vanishes on the grid")
    proj = np.abs(g0.fibers).max(axis=1)
    e2 = _boundary_cells(proj.reshape((grid.nx,) * d) > 0) * grid.cell_volume_x * float(proj.max())

    rep = MixingReport(kind=field.kind, dim=d, tau_used=T, q=q, f0_norm=N0)
    for t in times:
        t = float(t)
        if t <= 0:
            raise ConfigError("dispersion times must be positive")
        ft = solve_cauchy(field, f0, t, grid, cfg, safety)
        fib = np.abs(ft.fibers)
        masses = fib.sum(axis=1) * grid.cell_volume_v
        i_star = int(np.argmax(masses))
        measured = float(masses[i_star])
        row = fib[i_star]
        e1 = _boundary_cells(row.reshape((grid.nv,) * d) > 0) * grid.cell_volume_v * float(row.max(initial=0.0))
        td = t**d
        bound = q / td * N0
        normalized = measured * td / N0
        slack_norm = slack_coeff * (q * e2 + e1 * td) / N0
        rep.times.append(t)
        rep.measured_norm.append(measured)
        rep.bound.append(bound)
        rep.ratio.append(measured / bound)
        rep.normalized.append(normalized)
        rep.grid_slack.append(slack_norm / q)
        rep.passes.append(bool(measured / bound <= 1.0 + slack_norm / q))
        rep.in_regime.append(bool(t <= T))
        sc = sharp_constant(field.kind, t, d)
        if sc is None or not math.isfinite(sc):
            rep.sharp_constant.append(None)
            rep.sharp_slack.append(None)
            rep.sharp_pass.append(None)
        else:
            s_slack = slack_coeff * (sc * e2 + e1 * td) / N0
            rep.sharp_constant.append(sc)
            rep.sharp_slack.append(s_slack)
            rep.sharp_pass.append(bool(normalized <= sc + s_slack))
    return rep


@dataclass
class JacobianReport:
    kind: str
    dim: int
    M: float
    T: float
    tau0: float
    times: list = dc_field(default_factory=list)
    det_inv: list = dc_field(default_factory=list)
    det_bound: list = dc_field(default_factory=list)
    gronwall_norm: list = dc_field(default_factory=list)
    gronwall_bound: list = dc_field(default_factory=list)
    injectivity_margin: list = dc_field(default_factory=list)
    injectivity_bound: list = dc_field(default_factory=list)
    det_pass: list = dc_field(default_factory=list)
    gronwall_pass: list = dc_field(default_factory=list)
    injectivity_pass: list = dc_field(default_factory=list)
    in_regime: list = dc_field(default_factory=list)
    injectivity_regime: list = dc_field(default_factory=list)

    @property
    def passed(self) -> bool:
        ok = all(self.gronwall_pass)
        for i, r in enumerate(self.in_regime):
            if r:
                ok &= self.det_pass[i]
            if self.injectivity_regime[i] and self.injectivity_pass[i] is not None:
                ok &= self.injectivity_pass[i]
        return bool(ok)

    def to_json(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out

    def to_csv(self, path) -> None:
        cols = ["t", "det_inv", "det_bound", "gronwall_norm", "gronwall_bound", "injectivity_margin", "injectivity_bound", "pass", "in_regime"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i, t in enumerate(self.times):
                ok = self.gronwall_pass[i] and (self.det_pass[i] or not self.in_regime[i])
                vals = [t, self.det_inv[i], self.det_bound[i], self.gronwall_norm[i], self.gronwall_bound[i], self.injectivity_margin[i], self.injectivity_bound[i]]
                fh.write(",".join(repr(float(v)) for v in vals) + f",{int(ok)},{int(self.in_regime[i])}\n")


# relative allowance for roundoff when a bound is attained exactly (free transport)
_ROUNDOFF = 1e-10


def _pair_margin(X: np.ndarray, V: np.ndarray) -> float:
    """min over pairs i<j of |X_i - X_j| / |V_i - V_j|."""
    dX = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
    dV = np.linalg.norm(V[:, None, :] - V[None, :, :], axis=-1)
    iu = np.triu_indices(len(X), k=1)
    dv = dV[iu]
    keep = dv > 0
    if not keep.any():
        return math.nan
    return float(np.min(dX[iu][keep] / dv[keep]))


def jacobian_bounds(field: ForceField, sample_points, times: Sequence[float], cfg: IntegratorConfig, M: Optional[float] = None) -> JacobianReport:
    """Integrate dX(-t)/dv at the samples and compare with the Gronwall, determinant
    and injectivity bounds. Injectivity margins use pairs of samples sharing x.
    A singular Jacobian gives det_inv = inf (a bound violation, not an error)."""
    z = np.atleast_2d(np.asarray(sample_points, dtype=float))
    d = field.dim
    M = field.mixing_constant if M is None else float(M)
    T = mixing_time_lower_bound(M, d)
    tau0 = injectivity_time(M)
    _, inverse, counts = np.unique(z[:, :d], axis=0, return_inverse=True, return_counts=True)
    inverse = np.asarray(inverse).ravel()
    rep = JacobianReport(kind=field.kind, dim=d, M=M, T=T, tau0=tau0)
    for t in times:
        t = float(t)
        feet, jx, _ = integrate_variational_batch(field, z, -t, cfg)
        det = np.abs(np.linalg.det(jx))
        with np.errstate(divide="ignore"):
            det_inv = float(np.max(np.where(det < 1e-14, np.inf, 1.0 / np.maximum(det, 1e-300))))
        g_norm = float(np.max(max_entry_norm(jx)))
        margin = math.nan
        for grp in np.nonzero(counts > 1)[0]:
            idx = np.nonzero(inverse == grp)[0]
            m = _pair_margin(feet[idx, :d], z[idx, d:])
            margin = m if math.isnan(margin) else min(margin, m)
        db = 2.0 * t**-d
        gb = t * math.exp(t * t * M / 2.0)
        rep.times.append(t)
        rep.det_inv.append(det_inv)
        rep.det_bound.append(db)
        rep.gronwall_norm.append(g_norm)
        rep.gronwall_bound.append(gb)
        rep.injectivity_margin.append(margin)
        rep.injectivity_bound.append(t / 2.0)
        rep.det_pass.append(bool(det_inv <= db * (1 + _ROUNDOFF)))
        rep.gronwall_pass.append(bool(g_norm <= gb * (1 + _ROUNDOFF)))
        rep.injectivity_pass.append(None if math.isnan(margin) else bool(margin >= t / 2.0 * (1 - _ROUNDOFF)))
        rep.in_regime.append(bool(t <= T))
        rep.injectivity_regime.append(bool(t <= tau0))
    return rep


def injectivity_margin(field: ForceField, x, v_samples, t: float, cfg: IntegratorConfig) -> float:
    """min over pairs v != v' of |X(-t; x, v') - X(-t; x, v)| / |v - v'|."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    V = np.atleast_2d(np.asarray(v_samples, dtype=float))
    z = np.concatenate([np.broadcast_to(x, V.shape), V], axis=1)
    feet = flow_points(field, z, -float(t), cfg)
    return _pair_margin(feet[:, : field.dim], V)


@dataclass(frozen=True)
class InjectivityResult:
    t: float
    margin: float
    bound: float
    tau0: float

    @property
    def in_regime(self) -> bool:
        return self.t <= self.tau0

    @property
    def passed(self) -> bool:
        return self.margin >= self.bound * (1 - _ROUNDOFF)


def injectivity_check(field: ForceField, x, v_samples, t: float, cfg: IntegratorConfig, M: Optional[float] = None) -> InjectivityResult:
    M = field.mixing_constant if M is None else float(M)
    return InjectivityResult(float(t), injectivity_margin(field, x, v_samples, t, cfg), float(t) / 2.0, injectivity_time(M))


def leibniz_det(A: np.ndarray) -> np.ndarray:
    """Determinant by permutation expansion over the last two axes."""
    A = np.asarray(A, dtype=float)
    d = A.shape[-1]
    total = np.zeros(A.shape[:-2])
    for perm in itertools.permutations(range(d)):
        inversions = sum(1 for i in range(d) for j in range(i + 1, d) if perm[i] > perm[j])
        term = np.ones(A.shape[:-2])
        for i, p in enumerate(perm):
            term = term * A[..., i, p]
        total = total + (-term if inversions % 2 else term)
    return total


@dataclass(frozen=True)
class DetPerturbationReport:
    d: int
    trials: int
    eps: float
    violations: int
    min_margin: float
    max_lu_leibniz_diff: Optional[float]

    @property
    def passed(self) -> bool:
        ok = self.violations == 0
        if self.max_lu_leibniz_diff is not None:
            ok = ok and self.max_lu_leibniz_diff <= 1e-12
        return ok


def det_perturbation_check(d: int, trials: int, eps: float, seed: int = 0, batch: int = 20000) -> DetPerturbationReport:
    """Random A with entries in [-eps, eps]; count det(I + A) < 1 - d! ||A||.

    ``eps`` must lie in the smallness regime eps <= 1 / (2 d d!). Comparisons
    allow 4 ulps of roundoff. For d <= 4 the LU determinant is cross-checked
    against the Leibniz expansion.
    """
    if d < 1 or trials < 1:
        raise ConfigError("need d >= 1 and trials >= 1")
    limit = 1.0 / (2 * d * math.factorial(d))
    if not 0 < eps <= limit:
        raise ConfigError(f"eps={eps} outside the smallness regime (0, {limit}]")
    rng = np.random.default_rng(seed)
    fact = math.factorial(d)
    ulp = 4 * np.finfo(float).eps
    violations = 0
    min_margin = math.inf
    max_diff = 0.0 if d <= 4 else None
    done = 0
    while done < trials:
        n = min(batch, trials - done)
        A = rng.uniform(-eps, eps, size=(n, d, d))
        M = np.eye(d) + A
        det = np.linalg.det(M)
        lower = 1.0 - fact * max_entry_norm(A)
        margin = det - lower
        violations += int(np.count_nonzero(margin < -ulp))
        min_margin = min(min_margin, float(margin.min()))
        if max_diff is not None:
            max_diff = max(max_diff, float(np.max(np.abs(det - leibniz_det(M)))))
        done += n
    return DetPerturbationReport(d, trials, eps, violations, min_margin, max_diff)


def dumps(obj) -> str:
    """Deterministic JSON for reports (infinities as strings)."""

    def clean(o):
        if isinstance(o, float):
            if math.isinf(o):
                return "inf" if o > 0 else "-inf"
            if math.isnan(o):
                return "nan"
            return o
        if isinstance(o, dict):
            return {str(k): clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, (np.floating,)):
            return clean(float(o))
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, np.bool_):
            return bool(o)
        if isinstance(o, np.ndarray):
            return clean(o.tolist())
        return o

    return json.dumps(clean(obj), indent=2, sort_keys=True)
