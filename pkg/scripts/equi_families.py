"""Fibrewise and joint moduli of the concentrating families as eps shrinks."""

import argparse
import csv

from kinetra.equiint import joint_concentration, modulus_v, modulus_xv, oscillation, v_concentration, x_concentration
from kinetra.grid import PhaseGrid, Rectangle

FAMILIES = {
    "x_concentration": x_concentration,
    "v_concentration": v_concentration,
    "joint_concentration": joint_concentration,
    "oscillation": oscillation,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--alpha", type=float, default=0.1)
    ap.add_argument("--out", default="equi_families.csv")
    args = ap.parse_args()
    grid = PhaseGrid.cubic(1, (0, 1), (0, 1), args.n, args.n)
    K = Rectangle.cube(0, 1, 2)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["family", "eps", "modulus_v", "modulus_xv"])
        for name, make in FAMILIES.items():
            for k in range(1, 7):
                eps = 2.0**-k
                f = make(eps, grid)
                mv, mxv = modulus_v(f, K, args.alpha), modulus_xv(f, K, args.alpha)
                w.writerow([name, eps, mv, mxv])
                print(f"{name:>20}  eps=1/{2**k:<3d} modulus_v={mv:.4f}  modulus_xv={mxv:.4f}")


if __name__ == "__main__":
    main()
