"""Run every CLI experiment once into an output directory.

    python3 scripts/cli_suite.py --out runs/a --seed 0 --threads 1

Used by the determinism acceptance check: two runs with the same seed must
produce byte-identical CSV files whatever the thread count.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from polarbev.harness.cli import main as cli


def run_suite(out: Path, seed: int, threads: int | None) -> int:
    out.mkdir(parents=True, exist_ok=True)
    common = ["--seed", str(seed)]
    if threads is not None:
        common += ["--threads", str(threads)]
    steps = [
        ["density", "--grid", "polar", "--out", str(out / "density_polar.csv")],
        ["density", "--grid", "cart", "--out", str(out / "density_cart.csv")],
        ["scene", "--frames", "2", "--out", str(out / "scene.json")],
        ["equivariance", "--scene", str(out / "scene.json"), "--delta-bins", "0,64,10.5",
         "--out", str(out / "equivariance.csv")],
        ["revolve", "--scene", str(out / "scene.json"), "--k", "1", "--out", str(out / "revolve.csv")],
        ["pipeline", "--scene", str(out / "scene.json"), "--sae", "heatmap",
         "--out", str(out / "pipeline")],
    ]
    for argv in steps:
        code = cli(argv[:1] + common + argv[1:])
        if code:
            print(f"step {argv[0]} failed with exit code {code}", file=sys.stderr)
            return code
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    sys.exit(run_suite(args.out, args.seed, args.threads))
