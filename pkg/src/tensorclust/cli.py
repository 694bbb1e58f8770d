"""tensorclust command line: simulate, fit, benchmark, delta-sweep, select-k.

Exit codes: 0 success, 2 bad configuration or arguments, 3 file problems,
4 numerical failure (degenerate cluster, singular covariance).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import baseline_em, bench, dataio, deem, initializer, simgen, tnmm

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("tensorclust")


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None


def _lambda_grid(text: str | None):
    if text is None:
        return None
    path = Path(text)
    if path.suffix == ".json" or path.exists():
        grid = json.loads(path.read_text())
    else:
        grid = _floats(text)
    if not grid or min(grid) < 0:
        raise ConfigError("lambda grid must be a nonempty list of non-negative numbers")
    return [float(g) for g in grid]


def _build(cls, doc: dict | None, section: str, **defaults):
    doc = dict(doc or {})
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"config section '{section}': unknown field(s) {sorted(unknown)}")
    if section == "deem" and doc.get("schedule") is not None:
        doc["schedule"] = deem.LambdaSchedule(**doc["schedule"])
    try:
        return cls(**{**defaults, **doc})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section '{section}': {exc}") from None


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    unknown = set(doc) - {"deem", "em", "kmeans"}
    if unknown:
        raise ConfigError(f"unknown config section(s) {sorted(unknown)}; expected deem, em, kmeans")
    return doc


def _write_json(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=2, default=_json_default)
    if out is None:
        print(text)
        return
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(text + "\n")
    log.info("wrote %s", out)


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if (args.spec is None) == (args.model is None):
        raise ConfigError("give exactly one of --spec or --model")
    if args.out is None:
        raise ConfigError("--out is required")
    if args.spec is not None:
        spec = simgen.SimSpec.from_json(Path(args.spec).read_text())
        if args.seed is not None:
            spec.seed = args.seed
    else:
        if args.model == "M7" and not args.large:
            raise ConfigError("M7 has p=27000; pass --large to generate it")
        spec = simgen.preset(args.model, seed=args.seed or 0)
    ds = simgen.generate(spec)
    meta = dataio.DatasetMeta(dims=list(spec.dims), n=len(ds.data), K_true=spec.K, seed=spec.seed,
                              spec=spec.to_dict())
    path = dataio.write_dataset(args.out, ds.data, meta, labels=ds.labels, truth=ds.truth)
    log.info("simulated %d observations of dims %s to %s", len(ds.data), spec.dims, path)
    return EXIT_OK


def _fit_summary(res: deem.FitResult) -> dict:
    return {
        "labels": res.labels.tolist(),
        "iters": res.iters,
        "converged": res.converged,
        "bic": res.bic,
        "support_size": res.support_size,
        "support": sorted(res.support),
        "params": dataio.params_to_dict(res.params),
    }


def cmd_fit(args) -> int:
    if args.data is None or args.k is None:
        raise ConfigError("fit needs --data and --k")
    K = args.k
    cfg = _load_config(args.config)
    data, meta = dataio.read_dataset(args.data)
    truth_labels, _ = dataio.read_truth(args.data)
    seed = args.seed if args.seed is not None else 0
    km_cfg = _build(initializer.KmeansConfig, cfg.get("kmeans"), "kmeans", seed=seed)
    t0 = time.perf_counter()
    labels = initializer.kmeans_labels(data, K, km_cfg)
    doc: dict = {"method": args.method, "K": K, "dims": meta.dims, "n": meta.n}
    if args.method == "kmeans":
        doc["labels"] = labels.tolist()
    else:
        init = initializer.init_params(data, labels, K)
        if args.method == "deem":
            dcfg = _build(deem.DeemConfig, cfg.get("deem"), "deem", seed=seed)
            lam, res = deem.tune(data, K, _lambda_grid(args.lambda_grid), dcfg, init)
            doc.update(lam=lam, lambda_path=res.path)
        else:
            ecfg = _build(baseline_em.EmConfig, cfg.get("em"), "em")
            res = baseline_em.em_fit(data, K, ecfg, init)
            doc["loglik"] = res.loglik
        doc.update(_fit_summary(res))
    doc["seconds"] = time.perf_counter() - t0
    if truth_labels is not None and meta.K_true == K:
        doc["error"] = simgen.clustering_error(np.asarray(doc["labels"]), truth_labels, K)
    _write_json(doc, args.out)
    return EXIT_OK


def _bench_config(args, methods) -> bench.BenchConfig:
    cfg = _load_config(args.config)
    return bench.BenchConfig(
        methods=tuple(methods),
        replicates=args.replicates,
        seed=args.seed if args.seed is not None else 0,
        workers=args.workers or os.cpu_count() or 1,
        lambda_grid=_lambda_grid(args.lambda_grid),
        deem=_build(deem.DeemConfig, cfg.get("deem"), "deem"),
        em=_build(baseline_em.EmConfig, cfg.get("em"), "em"),
        kmeans=_build(initializer.KmeansConfig, cfg.get("kmeans"), "kmeans"),
    )


def cmd_benchmark(args) -> int:
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    unknown = [m for m in models if m not in simgen.MODELS]
    if unknown:
        raise ConfigError(f"unknown model(s) {unknown}; choose from {', '.join(simgen.MODELS)}")
    if "M7" in models and not args.large:
        raise ConfigError("M7 has p=27000 and takes minutes per replicate; pass --large to include it")
    methods = [m.strip() for m in args.method.split(",")] if args.method else list(bench.METHODS)
    try:
        config = _bench_config(args, methods)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = bench.run_benchmark(models, config)
    _write_json(report, args.out)
    for name, entry in report["models"].items():
        for m in config.methods:
            cell = entry[m]
            se = "n/a" if cell["se"] is None else f"{cell['se']:.2f}"
            mean = "n/a" if cell["mean"] is None else f"{cell['mean']:.2f}"
            print(f"{name:3s} {m:8s} {mean:>6s} ({se}) n={cell['replicates']} failures={len(cell['failures'])}",
                  file=sys.stderr)
    return EXIT_OK


def cmd_delta_sweep(args) -> int:
    a_values = _floats(args.a)
    if not a_values or min(a_values) <= 0:
        raise ConfigError("--a must list positive numbers")
    try:
        config = _bench_config(args, ["optimal", "deem"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = bench.run_delta_sweep(a_values, config)
    _write_json(report, args.out)
    for e in report["sweep"]:
        print(f"a={e['a']:<5g} deem {e['deem']['mean']:.2f} optimal {e['optimal']['mean']:.2f} "
              f"gap {e['gap']['mean']:.2f} iters {e['deem'].get('mean_iters', float('nan')):.1f}", file=sys.stderr)
    return EXIT_OK


def cmd_select_k(args) -> int:
    if args.data is None:
        raise ConfigError("select-k needs --data")
    k_grid = _ints(args.k_grid)
    cfg = _load_config(args.config)
    data, meta = dataio.read_dataset(args.data)
    seed = args.seed if args.seed is not None else 0
    dcfg = _build(deem.DeemConfig, cfg.get("deem"), "deem", seed=seed)
    km_cfg = _build(initializer.KmeansConfig, cfg.get("kmeans"), "kmeans", seed=seed)
    K, res = deem.select_k(data, k_grid, _lambda_grid(args.lambda_grid), dcfg, km_cfg)
    doc = {"K": K, "k_grid": k_grid, "lam": res.lam, **_fit_summary(res)}
    _write_json(doc, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tensorclust", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--config", help="JSON with optional sections deem, em, kmeans")
        if data:
            p.add_argument("--data", help="dataset CSV (with .json sidecar)")
        return p

    p = common(sub.add_parser("simulate", help="generate a dataset from a spec or a benchmark model"))
    p.add_argument("--spec", help="SimSpec JSON file")
    p.add_argument("--model", choices=simgen.MODELS)
    p.add_argument("--large", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("fit", help="cluster one dataset"), data=True)
    p.add_argument("--k", type=int)
    p.add_argument("--method", choices=("deem", "em", "kmeans"), default="deem")
    p.add_argument("--lambda-grid", help="comma list or JSON file; default is a log grid from lambda_max")
    p.set_defaults(func=cmd_fit)

    for name, func, helptext in (("benchmark", cmd_benchmark, "replicated simulation benchmark"),
                                 ("delta-sweep", cmd_delta_sweep, "separation sweep on M1")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--replicates", type=int, default=20)
        p.add_argument("--workers", type=int, help="worker processes (default: all cores)")
        p.add_argument("--lambda-grid")
        p.add_argument("--large", action="store_true", help="allow M7")
        if name == "benchmark":
            p.add_argument("--models", default="M1")
            p.add_argument("--method", help=f"comma list from {', '.join(bench.METHODS)}")
        else:
            p.add_argument("--a", default="0.5,1,2,4", help="separation multipliers")
        p.set_defaults(func=func)

    p = common(sub.add_parser("select-k", help="joint BIC choice of K and lambda"), data=True)
    p.add_argument("--k", dest="k_grid", default="2,3,4", help="comma list of candidate K")
    p.add_argument("--lambda-grid")
    p.set_defaults(func=cmd_select_k)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, dataio.DatasetFormatError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (deem.DegenerateClusterError, np.linalg.LinAlgError, initializer.EmptyClusterError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, simgen.SpecError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
