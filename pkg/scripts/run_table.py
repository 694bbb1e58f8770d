"""Simulation benchmark table: mean clustering error (SE) per model and method.

    python scripts/run_table.py --models M1,M2,M3,M4 --replicates 20 --out table.json
"""

import argparse
import json
import logging
import os
import warnings

from tensorclust import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", default="M1,M2,M3,M4,M5,M6")
    ap.add_argument("--methods", default=",".join(bench.METHODS))
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default="table.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    warnings.simplefilter("ignore", RuntimeWarning)

    methods = tuple(args.methods.split(","))
    cfg = bench.BenchConfig(methods=methods, replicates=args.replicates, seed=args.seed, workers=args.workers)
    report = bench.run_benchmark(args.models.split(","), cfg)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2)

    print("model  " + "".join(f"{m:>16}" for m in methods) + "    wall")
    for name, entry in report["models"].items():
        cells = []
        for m in methods:
            c = entry[m]
            se = "-" if c["se"] is None else f"{c['se']:.2f}"
            cells.append(f"{c['mean']:>9.2f} ({se})" if c["mean"] is not None else f"{'failed':>16}")
        print(f"{name:<7}" + "".join(f"{s:>16}" for s in cells) + f"  {entry['wall_seconds']:6.0f}s")


if __name__ == "__main__":
    main()
