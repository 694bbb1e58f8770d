"""Dataset files: headerless CSV payload plus JSON sidecars.

``name.csv`` holds one observation per row (Fortran-order vectorization),
``name.json`` the metadata, and ``name.truth.json`` the true labels and
parameters when the data were simulated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tnmm import TnmmParams

FLOAT_FMT = "%.17g"


class DatasetFormatError(ValueError):
    pass


@dataclass
class DatasetMeta:
    dims: list[int]
    n: int
    K_true: int | None = None
    seed: int | None = None
    spec: dict | None = None


def _paths(path) -> tuple[Path, Path, Path]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".csv", ".json") else path
    return stem.with_suffix(".csv"), stem.with_suffix(".json"), stem.with_name(stem.name + ".truth.json")


def params_to_dict(params: TnmmParams) -> dict:
    return {
        "pis": params.pis.tolist(),
        "dims": list(params.dims),
        "mus": [mu.ravel(order="F").tolist() for mu in params.mus],
        "sigmas": [S.tolist() for S in params.sigmas],
    }


def params_from_dict(doc: dict) -> TnmmParams:
    dims = tuple(doc["dims"])
    mus = np.stack([np.asarray(v, dtype=float).reshape(dims, order="F") for v in doc["mus"]])
    return TnmmParams(np.asarray(doc["pis"], dtype=float), mus, [np.asarray(S, dtype=float) for S in doc["sigmas"]])


def write_dataset(path, data: np.ndarray, meta: DatasetMeta, labels=None, truth: TnmmParams | None = None) -> Path:
    """Write payload and sidecars; returns the CSV path."""
    data = np.asarray(data, dtype=float)
    if tuple(data.shape[1:]) != tuple(meta.dims) or len(data) != meta.n:
        raise DatasetFormatError(f"data shape {data.shape} does not match metadata dims {meta.dims}, n={meta.n}")
    csv_path, meta_path, truth_path = _paths(path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    rows = data.reshape(len(data), -1, order="F")
    np.savetxt(csv_path, rows, fmt=FLOAT_FMT, delimiter=",")
    meta_path.write_text(json.dumps(meta.__dict__, indent=2))
    if labels is not None or truth is not None:
        doc = {}
        if labels is not None:
            doc["labels"] = np.asarray(labels).astype(int).tolist()
        if truth is not None:
            doc["params"] = params_to_dict(truth)
        truth_path.write_text(json.dumps(doc))
    return csv_path


def read_dataset(path) -> tuple[np.ndarray, DatasetMeta]:
    csv_path, meta_path, _ = _paths(path)
    try:
        doc = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{meta_path}: invalid JSON ({exc})") from None
    missing = {"dims", "n"} - set(doc)
    if missing:
        raise DatasetFormatError(f"{meta_path}: missing field(s) {sorted(missing)}")
    meta = DatasetMeta(**{k: doc.get(k) for k in DatasetMeta.__dataclass_fields__})
    try:
        rows = np.loadtxt(csv_path, delimiter=",", ndmin=2, dtype=float)
    except ValueError as exc:
        raise DatasetFormatError(f"{csv_path}: {exc}") from None
    p = int(np.prod(meta.dims))
    if rows.shape != (meta.n, p):
        raise DatasetFormatError(f"{csv_path}: payload is {rows.shape}, metadata says ({meta.n}, {p})")
    data = np.stack([r.reshape(meta.dims, order="F") for r in rows]) if meta.n else np.zeros((0, *meta.dims))
    return data, meta


def read_truth(path) -> tuple[np.ndarray | None, TnmmParams | None]:
    """Labels and parameters from the truth sidecar, (None, None) if there is none."""
    truth_path = _paths(path)[2]
    if not truth_path.exists():
        return None, None
    doc = json.loads(truth_path.read_text())
    labels = np.asarray(doc["labels"], dtype=int) if "labels" in doc else None
    params = params_from_dict(doc["params"]) if "params" in doc else None
    return labels, params
