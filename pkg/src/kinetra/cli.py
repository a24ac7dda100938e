"""``kinetra`` command line.

Exit codes: 0 all checks pass, 1 a bound is violated, 2 bad configuration,
3 a trajectory left its safety window.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dispersion import (
    det_perturbation_check,
    dumps,
    jacobian_bounds,
    mixing_time_lower_bound,
    verify_dispersion,
)
from .equiint import equi_report, slab_fiber_experiment, translation_modulus, x_concentration
from .errors import ConfigError, EscapeError
from .flow import PhasePoint, trajectory
from .grid import InitialData, PhaseGrid, Rectangle
from .transport import (
    duality_terms,
    resolvent_with_info,
    sobolev_seminorm,
    solve_cauchy,
    transport_derivative,
    velocity_moment,
)

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_ESCAPE = 0, 1, 2, 3
SUITES = ("dispersion", "jacobian", "duality", "resolvent", "equi")

log = logging.getLogger("kinetra")


class Run:
    """Output directory, format and the echoed configuration for one invocation."""

    def __init__(self, cfg: RunConfig, out: Path, fmt: str):
        self.cfg = cfg
        self.out = out
        self.fmt = fmt
        out.mkdir(parents=True, exist_ok=True)

    def header(self) -> str:
        return "# " + json.dumps(self.cfg.to_json(), sort_keys=True)

    def write_json(self, name: str, payload: dict) -> Path:
        path = self.out / f"{name}.json"
        path.write_text(dumps({"config": self.cfg.to_json(), **payload}) + "\n")
        return path

    def write_table(self, name: str, columns, rows, extra: dict | None = None) -> Path:
        """CSV with the config echoed on the first line, or JSON with named columns."""
        if self.fmt == "json":
            return self.write_json(name, {"columns": list(columns), "rows": [list(r) for r in rows], **(extra or {})})
        path = self.out / f"{name}.csv"
        lines = [self.header(), ",".join(columns)]
        lines += [",".join(_fmt(v) for v in row) for row in rows]
        path.write_text("\n".join(lines) + "\n")
        if extra:
            self.write_json(f"{name}_summary", extra)
        return path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def cmd_flow(run: Run) -> int:
    cfg = run.cfg
    field = cfg.build_field()
    d = cfg.dim
    pts = np.atleast_2d(np.asarray(cfg.points, dtype=float))
    if pts.shape[1] != 2 * d:
        raise ConfigError(f"points must have {2 * d} coordinates")
    times = np.linspace(0.0, cfg.t_final, cfg.n_out + 1)
    cols = ["t"] + [f"x{i + 1}" for i in range(d)] + [f"v{i + 1}" for i in range(d)]
    for k, z0 in enumerate(pts):
        rows = trajectory(field, PhasePoint.from_array(z0), times, cfg.flow_integrator())
        run.write_table(f"trajectory_{k}", cols, rows)
        print(" ".join(_fmt(v) for v in rows[-1]))
    return EXIT_OK


def cmd_tau(run: Run, M=None, d=None) -> int:
    cfg = run.cfg
    if M is None:
        M = cfg.M if cfg.M is not None else cfg.build_field().mixing_constant
    d = d if d is not None else (cfg.d if cfg.d is not None else cfg.dim)
    if M < 0 or d < 1:
        raise ConfigError("need M >= 0 and d >= 1")
    T = mixing_time_lower_bound(float(M), int(d), cfg.tolerances.bisection_tol)
    print("inf" if math.isinf(T) else repr(T))
    run.write_json("tau", {"M": float(M), "d": int(d), "T": T})
    return EXIT_OK


def _verify_dispersion(run: Run) -> tuple[bool, list]:
    cfg = run.cfg
    field = cfg.build_field()
    times = cfg.time_list()
    grid = cfg.grid([0.0] + times)
    rep = verify_dispersion(field, cfg.data.build(cfg.dim), times, grid, cfg.integrator(), cfg.tolerances.slack_coeff)
    offenders = []
    for i, t in enumerate(rep.times):
        ok = rep.passes[i] and rep.sharp_pass[i] is not False
        if ok:
            continue
        if rep.in_regime[i]:
            offenders.append(f"dispersion t={t!r} ratio={rep.ratio[i]!r}")
        else:
            _warn(f"dispersion t={t!r} is beyond T={rep.tau_used!r}; not gated")
    if run.fmt == "json":
        run.write_json("dispersion", rep.to_json())
    else:
        path = run.out / "dispersion.csv"
        rep.to_csv(path)
        path.write_text(run.header() + "\n" + path.read_text())
    print(f"dispersion: max normalized {rep.max_normalized:.6g} over {len(rep.times)} times, {'pass' if rep.passed else 'FAIL'}")
    return rep.passed, offenders


def _verify_jacobian(run: Run) -> tuple[bool, list]:
    cfg = run.cfg
    field = cfg.build_field()
    rep = jacobian_bounds(field, cfg.sample_points(), cfg.time_list(), cfg.integrator())
    offenders = []
    for i, t in enumerate(rep.times):
        if not rep.gronwall_pass[i]:
            offenders.append(f"gronwall t={t!r} norm={rep.gronwall_norm[i]!r} bound={rep.gronwall_bound[i]!r}")
        if not rep.det_pass[i]:
            if rep.in_regime[i]:
                offenders.append(f"determinant t={t!r} 1/det={rep.det_inv[i]!r} bound={rep.det_bound[i]!r}")
            else:
                _warn(f"determinant t={t!r} is beyond T={rep.T!r}; not gated")
        if rep.injectivity_pass[i] is False:
            if rep.injectivity_regime[i]:
                offenders.append(f"injectivity t={t!r} margin={rep.injectivity_margin[i]!r}")
            else:
                _warn(f"injectivity t={t!r} is beyond tau0={rep.tau0!r}; not gated")
    d = cfg.dim
    det = det_perturbation_check(d, cfg.det_trials, 1.0 / (2 * d * math.factorial(d)), seed=cfg.seed)
    if not det.passed:
        offenders.append(f"determinant lemma d={d}: {det.violations} violations")
    if run.fmt == "json":
        run.write_json("jacobian", {"report": rep.to_json(), "det_lemma": det.__dict__ | {"passed": det.passed}})
    else:
        path = run.out / "jacobian.csv"
        rep.to_csv(path)
        path.write_text(run.header() + "\n" + path.read_text())
        run.write_json("det_lemma", {**det.__dict__, "passed": det.passed})
    ok = rep.passed and det.passed
    print(f"jacobian: {len(rep.times)} times x {cfg.n_samples} points, det lemma {det.violations} violations, {'pass' if ok else 'FAIL'}")
    return ok, offenders


def _bump_pair(cfg: RunConfig) -> tuple[InitialData, InitialData]:
    """Smooth datum and smooth test function for identities that need derivatives."""
    d = cfg.dim
    spec = cfg.data
    cx = spec.center_x if spec.center_x is not None else [0.5 * (spec.x[0] + spec.x[1])] * d
    cv = spec.center_v if spec.center_v is not None else [0.5 * (spec.v[0] + spec.v[1])] * d
    f = InitialData.bump(cx, cv, spec.radius, spec.amplitude)
    phi = InitialData.bump(cx, cv, 0.8 * spec.radius)
    return f, phi


def _verify_duality(run: Run) -> tuple[bool, list]:
    cfg = run.cfg
    field = cfg.build_field()
    f_data, phi0 = _bump_pair(cfg)
    t = cfg.t_final
    grid = cfg.grid(np.linspace(-t, t, 9), support=f_data.support)
    terms = duality_terms(field, f_data.on_grid(grid), transport_derivative(field, f_data, grid), phi0, t, cfg.integrator())
    ok = terms.residual <= cfg.tolerances.duality
    run.write_json("duality", {"t": t, "lhs": terms.lhs, "rhs": terms.rhs, "correction": terms.correction, "residual": terms.residual, "passed": ok})
    print(f"duality: residual {terms.residual:.3e} (tolerance {cfg.tolerances.duality:g}), {'pass' if ok else 'FAIL'}")
    return ok, [] if ok else [f"duality residual {terms.residual!r}"]


def _resolvent(run: Run) -> tuple:
    cfg = run.cfg
    field = cfg.build_field()
    g = cfg.data.build(cfg.dim)
    grid = cfg.grid()
    Rg, info = resolvent_with_info(
        field, g, cfg.lam, grid, cfg.integrator(), cfg.tolerances.tail_tol, quad_step=cfg.tolerances.resolvent_quad_step
    )
    g_sup = g.sup_norm if g.sup_norm is not None else float(np.max(np.abs(g.on_grid(grid).values)))
    ratio = float(np.max(np.abs(Rg.values))) / g_sup
    ok = ratio <= 1.0 / cfg.lam + cfg.tolerances.tail_tol
    summary = {"lam": cfg.lam, "norm_ratio": ratio, "bound": 1.0 / cfg.lam, "passed": ok, **info.__dict__}
    return Rg, summary, ok


def _verify_resolvent(run: Run) -> tuple[bool, list]:
    _, summary, ok = _resolvent(run)
    run.write_json("resolvent", summary)
    print(f"resolvent: |R g| / |g| = {summary['norm_ratio']:.10g} vs 1/lambda = {summary['bound']:.10g}, {'pass' if ok else 'FAIL'}")
    return ok, [] if ok else [f"resolvent ratio {summary['norm_ratio']!r}"]


def _slab_reports(cfg: RunConfig) -> list:
    field = cfg.build_field()
    d = cfg.dim
    T = min(cfg.mixing_time(), cfg.times.t_cap)
    times = [T / 4, T / 2, T]
    f_data = cfg.data.build(d)
    xs, _ = f_data.support.split()
    lo = xs.lo
    A = Rectangle(lo + 0.25 * xs.lengths, lo + 0.25 * xs.lengths + cfg.slab_width)
    grid = cfg.grid([0.0] + [-t for t in times] + times)
    f = f_data.on_grid(grid)
    reports = []
    for t in times:
        df = transport_derivative(field, f_data, grid) if f_data.grad is not None else None
        reports.append(slab_fiber_experiment(field, f, A, t, cfg.psi(), cfg.integrator(), df=df, slack_coeff=cfg.tolerances.slack_coeff))
    return reports


def _verify_equi(run: Run) -> tuple[bool, list]:
    reports = _slab_reports(run.cfg)
    cols = ["t", "sup_fiber_measure", "bound", "pairing_lhs", "pairing_rhs", "correction_term"]
    run.write_table("slab_fibers", cols, [r.row() for r in reports], extra={"reports": [r.to_json() for r in reports]})
    offenders = [f"slab fibre t={r.t!r} sup={r.sup_fiber_measure!r} bound={r.bound!r}" for r in reports if not r.passed]
    ok = not offenders
    print(f"equi: slab fibre measure within bound at {sum(r.passed for r in reports)}/{len(reports)} times, {'pass' if ok else 'FAIL'}")
    return ok, offenders


def cmd_verify(run: Run, suite: str) -> int:
    runners = {
        "dispersion": _verify_dispersion,
        "jacobian": _verify_jacobian,
        "duality": _verify_duality,
        "resolvent": _verify_resolvent,
        "equi": _verify_equi,
    }
    chosen = SUITES if suite == "all" else (suite,)
    offenders = []
    for name in chosen:
        _, bad = runners[name](run)
        offenders += bad
    for o in offenders:
        print(f"violation: {o}")
    return EXIT_VIOLATION if offenders else EXIT_OK


def cmd_moment(run: Run) -> int:
    cfg = run.cfg
    field = cfg.build_field()
    f0 = cfg.data.build(cfg.dim)
    grid = cfg.grid([0.0, cfg.t_final])
    f = solve_cauchy(field, f0, cfg.t_final, grid, cfg.integrator())
    rho = velocity_moment(f, cfg.psi())
    K = Rectangle(grid.x_window.lo, grid.x_window.hi)
    summary = {
        "t": cfg.t_final,
        "l1": rho.l1(),
        "l2": rho.l2(),
        "sobolev_s": cfg.sobolev_s,
        "sobolev_seminorm": sobolev_seminorm(rho, cfg.sobolev_s),
        "deltas": list(cfg.deltas),
        "translation_modulus": translation_modulus(rho, K, cfg.deltas),
    }
    xg = rho.grid
    cols = [f"x{i + 1}" for i in range(xg.dim)] + ["rho"]
    rows = [tuple(x) + (r,) for x, r in zip(xg.nodes(), rho.values.ravel())]
    run.write_table("moment", cols, rows, extra=summary)
    print(f"moment: |rho|_1 = {summary['l1']:.10g}, H^{cfg.sobolev_s:g} norm = {summary['sobolev_seminorm']:.10g}")
    return EXIT_OK


def cmd_resolvent(run: Run) -> int:
    Rg, summary, ok = _resolvent(run)
    path = run.out / ("resolvent.bin" if run.fmt == "json" else "resolvent.csv")
    Rg.save(path, "bin" if run.fmt == "json" else "csv")
    run.write_json("resolvent_summary", summary)
    print(f"resolvent: |R g| / |g| = {summary['norm_ratio']:.10g} vs 1/lambda = {summary['bound']:.10g}")
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_equi(run: Run) -> int:
    """Moduli of the x-concentration family on [0,1]^{2d}."""
    cfg = run.cfg
    d = cfg.dim
    grid = PhaseGrid.cubic(d, (0.0, 1.0), (0.0, 1.0), cfg.nx, cfg.nv)
    K = Rectangle.cube(0.0, 1.0, 2 * d)
    rows = []
    for eps in cfg.epsilons:
        rep = equi_report(x_concentration(float(eps), grid), K, cfg.alphas)
        rows += [(float(eps), a, mv, mxv) for a, mv, mxv in rep.rows()]
    run.write_table("equi", ["eps", "alpha", "modulus_v", "modulus_xv"], rows)
    for row in rows:
        print(" ".join(_fmt(v) for v in row))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kinetra", description="Characteristic flows and estimate checks for phase-space transport.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON run configuration")
        sp.add_argument("--out", type=Path, default=Path("kinetra-out"), help="report directory")
        sp.add_argument("--format", choices=("csv", "json"), help="report format (overrides the config)")
        sp.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    common(sub.add_parser("flow", help="trajectories of the configured points"))
    tau = common(sub.add_parser("tau", help="mixing time T for (M, d)"))
    tau.add_argument("--M", type=float)
    tau.add_argument("--d", type=int)
    ver = common(sub.add_parser("verify", help="run verification suites"))
    ver.add_argument("suite", nargs="?", default="all", choices=SUITES + ("all",))
    common(sub.add_parser("moment", help="velocity moment of the transported datum"))
    common(sub.add_parser("resolvent", help="resolvent of the datum on the grid"))
    common(sub.add_parser("equi", help="equiintegrability moduli of concentrating families"))
    return p


def _load(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config is not None else RunConfig()
    if args.format is not None:
        cfg.format = args.format
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        run = Run(cfg, args.out, cfg.format)
        if args.command == "flow":
            return cmd_flow(run)
        if args.command == "tau":
            return cmd_tau(run, args.M, args.d)
        if args.command == "verify":
            return cmd_verify(run, args.suite)
        if args.command == "moment":
            return cmd_moment(run)
        if args.command == "resolvent":
            return cmd_resolvent(run)
        return cmd_equi(run)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EscapeError as exc:
        print(f"escape: {exc} (exit time {exc.exit_time!r})", file=sys.stderr)
        return EXIT_ESCAPE


if __name__ == "__main__":
    sys.exit(main())
