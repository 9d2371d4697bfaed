"""Analytic band-edge coupling g_k against the finite lattice sum.

    python3 scripts/kspace_compare.py --pol z --a 0.25 --n 200
"""
import argparse
import csv
import math
import sys

from darkarray.couplings import LatticeSpec
from darkarray.kspace import analytic_gk, k_grid, lattice_sum_gk


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pol", default="z", choices="xyz")
    ap.add_argument("--a", type=float, default=0.25)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--l-over-a", type=float, nargs="+", default=[1, 1.5, 2, 3])
    args = ap.parse_args()
    w = csv.writer(sys.stdout)
    w.writerow(["l_over_a", "g_analytic", "g_lattice_sum", "rel_diff"])
    k_edge = k_grid(args.n, args.a)[-1]
    for la in args.l_over_a:
        l = la * args.a
        g_an, _ = analytic_gk(math.pi / args.a, l, args.pol, args.a)
        g_sum, _ = lattice_sum_gk(k_edge, LatticeSpec(args.n, 2, args.a, l, args.pol))
        w.writerow([la, f"{g_an:.6e}", f"{g_sum:.6e}", f"{abs(g_sum - g_an) / abs(g_an):.2e}"])


if __name__ == "__main__":
    main()
