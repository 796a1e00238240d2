"""Grid cells per square meter by distance band, polar vs Cartesian.

    python3 scripts/grid_density.py --out results/density
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

from polarbev.harness.density import DEFAULT_INTERVALS, grid_density, matched_cart_spec
from polarbev.harness.plots import plot_density
from polarbev.polar_grid import PolarGridSpec


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/density"))
    ap.add_argument("--n-theta", type=int, default=256)
    ap.add_argument("--n-r", type=int, default=64)
    args = ap.parse_args()

    polar = PolarGridSpec(args.n_theta, args.n_r)
    cart = matched_cart_spec(polar)
    profiles = [grid_density(polar, DEFAULT_INTERVALS), grid_density(cart, DEFAULT_INTERVALS)]
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "density.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("grid", "d_lo", "d_hi", "cells", "area_m2", "density"))
        for prof in profiles:
            for row in prof.rows():
                w.writerow((prof.kind, *row))
    plot_density(profiles, args.out / "density.svg")
    print(f"{'band (m)':>12} {'polar':>8} {'cart':>8}")
    for (lo, hi), dp, dc in zip(DEFAULT_INTERVALS, profiles[0].densities, profiles[1].densities):
        print(f"{f'[{lo:g}, {hi:g})':>12} {dp:8.3f} {dc:8.3f}")


if __name__ == "__main__":
    main()
