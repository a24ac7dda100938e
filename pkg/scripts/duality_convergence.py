"""Residual of the integration-by-parts identity under joint grid and time refinement."""

import argparse
import csv
import math

from kinetra.fields import make_builtin
from kinetra.flow import IntegratorConfig
from kinetra.grid import InitialData, PhaseGrid
from kinetra.transport import duality_terms, transport_derivative

LADDER = ((64, 8), (128, 16), (256, 32), (512, 64))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--t", type=float, default=0.5)
    ap.add_argument("--out", default="duality_convergence.csv")
    args = ap.parse_args()
    cfg = IntegratorConfig(step=1e-2)
    f = InitialData.bump([0.5], [0.0], 0.7)
    phi0 = InitialData.bump([0.3], [0.2], 0.6)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["field", "n", "n_t", "lhs", "rhs", "correction", "residual", "observed_order"])
        for kind in ("Zero", "Harmonic"):
            field = make_builtin(kind, 1)
            prev = None
            for n, n_t in LADDER:
                grid = PhaseGrid.cubic(1, (-1.5, 2.5), (-2, 2), n, n)
                terms = duality_terms(field, f.on_grid(grid), transport_derivative(field, f, grid), phi0, args.t, cfg, n_t=n_t)
                order = math.log2(prev / terms.residual) if prev else ""
                w.writerow([kind, n, n_t, terms.lhs, terms.rhs, terms.correction, terms.residual, order])
                print(f"{kind:>9}  {n:>4}^2  {n_t:>3} slices  residual {terms.residual:.3e}  order {order if order == '' else f'{order:.2f}'}")
                prev = terms.residual


if __name__ == "__main__":
    main()
