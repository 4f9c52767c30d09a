"""Tail slopes of every run CSV under a results directory, for several tail fractions.

    python3 scripts/tail_slope_report.py results/default --rho 0.25,0.5,0.75
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from pricelab.harness import tail_slope


def load(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    col = "regret_cum_mean" if "regret_cum_mean" in rows[0] else "regret_cum"
    return np.array([float(r[col]) for r in rows])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("directory", type=Path)
    ap.add_argument("--rho", default="0.25,0.5,0.75")
    args = ap.parse_args()
    rhos = [float(x) for x in args.rho.split(",")]
    print(f"{'file':<48}" + "".join(f"{'rho=' + str(r):>12}" for r in rhos))
    for path in sorted(args.directory.glob("*.csv")):
        if path.name.startswith(("interpret", "afd_", "bench")):
            continue
        series = load(path)
        cells = []
        for rho in rhos:
            try:
                cells.append(f"{tail_slope(series, rho).alpha_hat:>12.3f}")
            except ValueError:
                cells.append(f"{'n/a':>12}")
        print(f"{path.name:<48}" + "".join(cells))


if __name__ == "__main__":
    main()
