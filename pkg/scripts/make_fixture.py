"""Generate the bundled avocado-style fixture (synthetic, two regions).

Log price follows a mean-reverting process that reacts to last week's demand;
log demand responds to last week's price with elasticity -0.8 plus its own lag.
Raw (exponentiated) values are written in the Kaggle column layout.

    python scripts/make_fixture.py [--seed 7] [--weeks 169]
"""

import argparse
from pathlib import Path

import numpy as np
import pandas as pd

OUT = Path(__file__).resolve().parents[1] / "src" / "steerkit" / "data" / "avocado_fixture.csv"


def region_series(rng, weeks, level):
    price = np.empty(weeks)
    demand = np.empty(weeks)
    price[0], demand[0] = 0.1, level
    for t in range(1, weeks):
        demand[t] = level + 0.55 * (demand[t - 1] - level) - 0.8 * (price[t - 1] - 0.1) + 0.17 * rng.standard_normal()
        price[t] = 0.1 + 0.6 * (price[t - 1] - 0.1) + 0.25 * (demand[t] - level) + 0.12 * rng.standard_normal()
    return np.clip(price, -0.47, 0.68), np.clip(demand, 14.55, 15.83)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--weeks", type=int, default=169)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    dates = pd.date_range("2015-01-04", periods=args.weeks, freq="7D").strftime("%Y-%m-%d")
    frames = []
    for region, level in (("Southeast", 15.0), ("GreatLakes", 15.05)):
        price, demand = region_series(rng, args.weeks, level)
        frames.append(pd.DataFrame({
            "Date": dates,
            "region": region,
            "AveragePrice": np.round(np.exp(price), 4),
            "Total Volume": np.round(np.exp(demand), 2),
        }))
    pd.concat(frames).to_csv(args.out, index=False)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
