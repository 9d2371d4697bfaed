"""Gate error of the two-array exchange gate over array separations.

    python3 scripts/gate_scan.py --n 10 --a 0.1 --l-over-a 1 2 3 5
"""
import argparse
import csv
import sys

from darkarray.couplings import LatticeSpec
from darkarray.protocols import iswap_gate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--a", type=float, default=0.1)
    ap.add_argument("--l-over-a", type=float, nargs="+", default=[1, 2, 3, 5])
    args = ap.parse_args()
    w = csv.writer(sys.stdout)
    w.writerow(["l_over_a", "g_qa", "T_g", "error_total", "prediction_3GT5"])
    for la in args.l_over_a:
        rep = iswap_gate(LatticeSpec(args.n, 2, args.a, la * args.a))
        w.writerow([la, f"{rep.g_qa:.6e}", f"{rep.gate_time_Tg:.6e}", f"{rep.error_total:.6e}",
                    f"{rep.meta['prediction_3GT5']:.6e}"])


if __name__ == "__main__":
    main()
