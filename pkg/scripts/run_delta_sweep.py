"""Error of DEEM and of the optimal rule as the separation of M1 is scaled by a.

    python scripts/run_delta_sweep.py --a 0.5,1,2,4 --replicates 20 --out sweep.json
"""

import argparse
import json
import os
import warnings

from tensorclust import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--a", default="0.5,1,2,4")
    ap.add_argument("--base", default="M1")
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default="sweep.json")
    args = ap.parse_args()
    warnings.simplefilter("ignore", RuntimeWarning)

    cfg = bench.BenchConfig(methods=("optimal", "deem"), replicates=args.replicates,
                            seed=args.seed, workers=args.workers)
    report = bench.run_delta_sweep([float(a) for a in args.a.split(",")], cfg, base=args.base)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2)

    print(f"{'a':>5} {'optimal':>14} {'deem':>14} {'gap':>14} {'iters':>6}")
    for e in report["sweep"]:
        cell = lambda c: f"{c['mean']:6.2f} ({c['se']:.2f})"
        print(f"{e['a']:>5g} {cell(e['optimal']):>14} {cell(e['deem']):>14} {cell(e['gap']):>14} "
              f"{e['deem'].get('mean_iters', float('nan')):6.2f}")


if __name__ == "__main__":
    main()
