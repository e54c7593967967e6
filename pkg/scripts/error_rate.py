"""Two-stage estimation error against sample size, next to the Gaussian bound.

    python scripts/error_rate.py [--trials 200] [--seed 0] [--out error_rate.csv]
"""

import argparse
import csv

import numpy as np

from steerkit import GaussianNoise, LinearSystem, compute_rho, gaussian_error_bound, simulate_rollouts, two_stage_estimate

SYSTEM = LinearSystem(
    [[0.5, 0.1], [0.0, 0.4]],
    [[1.0, 0.2], [0.1, 0.8]],
    [[1.0, 0.0], [0.3, 1.0]],
    [[0.5, 0.1], [0.0, 0.6]],
)


def trial_errors(sys_, n, trials, seed, sigma1, sigma2):
    spec = sys_.to_spec(GaussianNoise(sys_.d, scale=[sigma1, sigma2]))
    big = simulate_rollouts(spec, T=3, K=2, n=n * trials, seed=seed)
    return np.array([
        np.sum((two_stage_estimate(big.take(np.arange(i * n, (i + 1) * n))).B_hat - sys_.B) ** 2)
        for i in range(trials)
    ])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=lambda s: [int(v) for v in s.split(",")], default=[10, 20, 40, 80, 160, 320, 640])
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--sigma1", type=float, default=1.0)
    ap.add_argument("--sigma2", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="error_rate.csv")
    args = ap.parse_args()

    rho = compute_rho(SYSTEM)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "mean_sq_error", "std_error", "bound"])
        for n in args.n:
            errs = trial_errors(SYSTEM, n, args.trials, args.seed + n, args.sigma1, args.sigma2)
            bound = gaussian_error_bound(SYSTEM.d, n, args.sigma1, args.sigma2, rho)
            se = errs.std(ddof=1) / np.sqrt(len(errs))
            w.writerow([n, errs.mean(), se, bound])
            print(f"n={n:5d}  mean ||B_hat - B||^2 = {errs.mean():.4f} (+/- {se:.4f})  bound = {bound:.4f}")


if __name__ == "__main__":
    main()
