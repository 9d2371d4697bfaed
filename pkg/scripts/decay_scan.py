"""Most-subradiant decay rate versus N, pinned and motion-averaged.

    python3 scripts/decay_scan.py --a 0.25 --eta 0 0.05 --n 20 40 80
"""
import argparse
import csv
import sys

from darkarray.couplings import K_E, LatticeSpec
from darkarray.motion import MotionParams, averaged_dark_decay_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--a", type=float, default=0.25)
    ap.add_argument("--eta", type=float, nargs="+", default=[0.0, 0.05], help="sigma * k_e")
    ap.add_argument("--n", type=int, nargs="+", default=[20, 40, 80])
    ap.add_argument("--realizations", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    w = csv.writer(sys.stdout)
    w.writerow(["eta", "N", "gamma_qa", "plateau"])
    for eta in args.eta:
        p = MotionParams(sigma=eta / K_E, n_realizations=args.realizations, seed=args.seed)
        res = averaged_dark_decay_study(LatticeSpec(args.n[0], spacing_a=args.a), args.n, p)
        for row in res.decay_vs_N:
            w.writerow([eta, row["N"], f"{row['gamma_qa']:.6e}", f"{res.saturation_level:.6e}"])


if __name__ == "__main__":
    main()
