"""Replicated simulation benchmarks: generate, fit, score, aggregate.

Every replicate draws its own seed from ``SeedSequence([seed, r])`` so a
report does not depend on how replicates are scheduled across workers.
"""

from __future__ import annotations

import logging
import resource
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import baseline_em, deem, initializer, simgen, tnmm

log = logging.getLogger(__name__)

METHODS = ("optimal", "kmeans", "deem", "em")


@dataclass
class BenchConfig:
    methods: tuple[str, ...] = METHODS
    replicates: int = 20
    seed: int = 0
    workers: int = 1
    lambda_grid: list[float] | None = None
    deem: deem.DeemConfig = field(default_factory=deem.DeemConfig)
    em: baseline_em.EmConfig = field(default_factory=baseline_em.EmConfig)
    kmeans: initializer.KmeansConfig = field(default_factory=initializer.KmeansConfig)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")


def replicate_seed(seed: int, r: int) -> int:
    return int(np.random.SeedSequence([seed, r]).generate_state(1)[0])


def _peak_rss_mb() -> float:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


def run_replicate(spec: simgen.SimSpec, config: BenchConfig) -> dict:
    """One dataset, every requested method. Failures are recorded, not raised."""
    ds = simgen.generate(spec)
    K = spec.K
    out: dict[str, dict] = {}
    init = None
    km_labels = None

    def start():
        nonlocal init, km_labels
        if init is None:
            km = initializer.KmeansConfig(config.kmeans.restarts, config.kmeans.max_lloyd_iters, spec.seed)
            km_labels = initializer.kmeans_labels(ds.data, K, km)
            init = initializer.init_params(ds.data, km_labels, K)
        return init

    for method in config.methods:
        t0 = time.perf_counter()
        rec: dict = {}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                if method == "optimal":
                    labels = tnmm.optimal_labels(ds.data, ds.truth)
                elif method == "kmeans":
                    start()
                    labels = km_labels
                elif method == "deem":
                    lam, res = deem.tune(ds.data, K, config.lambda_grid, config.deem, start())
                    labels = res.labels
                    rec.update(iters=res.iters, lam=lam, support=res.support_size, converged=res.converged)
                else:
                    res = baseline_em.em_fit(ds.data, K, config.em, start())
                    labels = res.labels
                    rec.update(iters=res.iters, converged=res.converged)
            rec["error"] = simgen.clustering_error(labels, ds.labels, K)
        except Exception as exc:  # recorded per cell, the run goes on
            rec = {"failed": f"{type(exc).__name__}: {exc}"}
            log.warning("%s seed=%d %s failed: %s", spec.name, spec.seed, method, exc)
        rec["seconds"] = time.perf_counter() - t0
        out[method] = rec
    out["_peak_rss_mb"] = _peak_rss_mb()
    return out


def _run_all(specs: list[simgen.SimSpec], config: BenchConfig) -> list[dict]:
    if config.workers == 1 or len(specs) == 1:
        return [run_replicate(s, config) for s in specs]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(run_replicate, specs, [config] * len(specs)))


def summarize(values) -> dict:
    """Mean and standard error (sd / sqrt(R)) in percent; se is None for a single value."""
    v = 100.0 * np.asarray(values, dtype=float)
    R = len(v)
    if R == 0:
        return {"mean": None, "se": None, "replicates": 0}
    se = float(np.std(v, ddof=1) / np.sqrt(R)) if R > 1 else None
    doc = {"mean": float(v.mean()), "se": se, "replicates": R}
    if R == 1:
        doc["se_note"] = "single replicate, no standard error"
    return doc


def aggregate(records: list[dict], methods) -> dict:
    cells = {}
    for method in methods:
        ok = [r[method] for r in records if "error" in r[method]]
        cell = summarize([c["error"] for c in ok])
        cell["failures"] = [r[method]["failed"] for r in records if "failed" in r[method]]
        cell["seconds"] = float(sum(r[method]["seconds"] for r in records))
        iters = [c["iters"] for c in ok if "iters" in c]
        if iters:
            cell["mean_iters"] = float(np.mean(iters))
        cells[method] = cell
    return cells


def run_benchmark(models, config: BenchConfig) -> dict:
    """Table-style report: per model and method, mean error and standard error in percent."""
    report = {"unit": "percent", "config": _config_doc(config), "models": {}}
    for name in models:
        t0 = time.perf_counter()
        specs = [simgen.preset(name, seed=replicate_seed(config.seed, r)) for r in range(config.replicates)]
        records = _run_all(specs, config)
        entry = aggregate(records, config.methods)
        entry["wall_seconds"] = time.perf_counter() - t0
        entry["peak_rss_mb"] = max(r["_peak_rss_mb"] for r in records)
        entry["errors"] = {m: [r[m].get("error") for r in records] for m in config.methods}
        report["models"][name] = entry
        log.info("%s done in %.1fs", name, entry["wall_seconds"])
    return report


def run_delta_sweep(a_values, config: BenchConfig, base: str = "M1") -> dict:
    """Rescale the mean differences of ``base`` by sqrt(a) and track DEEM against the optimal rule."""
    if any(a <= 0 for a in a_values):
        raise ValueError("every a must be positive")
    methods = tuple(m for m in ("optimal", "deem") if m in config.methods) or ("optimal", "deem")
    cfg = BenchConfig(**{**config.__dict__, "methods": methods})
    report = {"unit": "percent", "base": base, "config": _config_doc(cfg), "sweep": []}
    for a in a_values:
        t0 = time.perf_counter()
        specs = [
            simgen.preset(base, seed=replicate_seed(cfg.seed, r), mean_scale=float(np.sqrt(a)))
            for r in range(cfg.replicates)
        ]
        records = _run_all(specs, cfg)
        entry = {"a": float(a), **aggregate(records, methods)}
        paired = [r["deem"]["error"] - r["optimal"]["error"] for r in records
                  if "error" in r.get("deem", {}) and "error" in r.get("optimal", {})]
        entry["gap"] = summarize(paired)
        entry["wall_seconds"] = time.perf_counter() - t0
        report["sweep"].append(entry)
    return report


def _config_doc(config: BenchConfig) -> dict:
    doc = asdict(config)
    doc["methods"] = list(config.methods)
    if doc["deem"].get("schedule") is None:
        doc["deem"].pop("schedule")
    return doc
