"""Preparation error and optimal drive versus N for one array.

    python3 scripts/prep_scaling.py --a 0.25 --n 20 50 100 --out prep.csv
"""
import argparse
import csv
import sys

import numpy as np

from darkarray.couplings import LatticeSpec
from darkarray.protocols import prepare_dark_state


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--a", type=float, default=0.25)
    ap.add_argument("--n", type=int, nargs="+", default=[20, 50, 100])
    ap.add_argument("--krylov-m", type=int, default=30)
    ap.add_argument("--out")
    args = ap.parse_args()
    rows = []
    for n in args.n:
        r = prepare_dark_state(LatticeSpec(n, spacing_a=args.a), krylov_m=args.krylov_m)
        rows.append({"N": n, "epsilon": r.error_epsilon, "omega0_opt": r.optimal_omega0, "t_star": r.t_star})
        print(f"N={n:4d}  eps={r.error_epsilon:.4f}  omega={r.optimal_omega0:.3e}  t*={r.t_star:.1f}",
              file=sys.stderr)
    if len(rows) > 1:
        ns = np.array(args.n, float)
        s, c = np.polyfit(np.log(ns), np.log([r["epsilon"] for r in rows]), 1)
        so = np.polyfit(np.log(ns), np.log([r["omega0_opt"] for r in rows]), 1)[0]
        print(f"fit eps = {np.exp(c):.3f} N^{s:.3f}, omega exponent {so:.2f}", file=sys.stderr)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.DictWriter(out, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)


if __name__ == "__main__":
    main()
