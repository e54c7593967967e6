"""Eigenvalues of the joint (state, action) covariance over time for a rank-deficient system.

    python scripts/spectrum_sweep.py [--d 100 --rank 80 --n-w 2000] [--t-max 6] [--out spectrum.csv]
"""

import argparse
import csv

from steerkit import LinearSystem, check_full_row_rank_action, covariance_recursion, spectrum


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=100)
    ap.add_argument("--rank", type=int, default=80)
    ap.add_argument("--n-w", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--t-max", type=int, default=6)
    ap.add_argument("--out", default="spectrum.csv")
    args = ap.parse_args()

    sys_ = LinearSystem.wishart(args.d, args.rank, args.n_w, args.seed)
    for M in (2, 3):
        r = check_full_row_rank_action(sys_, M)
        print(f"M={M}: rank {r.rank_observed} of {r.rank_required} ({r.verdict})")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "index", "eigenvalue"])
        for t in range(1, args.t_max + 1):
            rep = spectrum(covariance_recursion(sys_, t))
            w.writerows([t, i, v] for i, v in enumerate(rep.eigenvalues))
            print(f"t={t}: {rep.num_zero} zero eigenvalues, smallest nonzero "
                  f"{min((v for v in rep.eigenvalues if v > rep.rank_tolerance * rep.eigenvalues[-1]), default=0):.3g}")


if __name__ == "__main__":
    main()
