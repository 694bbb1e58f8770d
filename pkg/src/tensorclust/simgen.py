"""Simulation models: covariance generators, tensor normal sampling, M1-M7, clustering error.

Index conventions inside :class:`SimSpec` are 0-based. A mean recipe entry
``{"cluster": 1, "index": [[0, 6], 0, 0], "value": 0.5}`` sets entries
(0..5, 0, 0) of the discriminant tensor of the second cluster to 0.5; list
entries are half-open ``[start, stop)`` ranges.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from math import factorial
from typing import Any

import numpy as np
from scipy.stats import ortho_group

from .tensor_core import batch_tucker
from .tnmm import TnmmParams, identify_sigmas, spd_inv, spd_sqrt


class SpecError(ValueError):
    """Invalid or incomplete simulation specification."""


# ---------------------------------------------------------------------------
# covariance generators
# ---------------------------------------------------------------------------

def ar_matrix(p: int, rho: float) -> np.ndarray:
    if not -1 < rho < 1:
        raise SpecError(f"AR parameter must lie in (-1, 1), got {rho}")
    i = np.arange(p)
    return rho ** np.abs(i[:, None] - i[None, :]).astype(float)


def cs_matrix(p: int, rho: float) -> np.ndarray:
    lower = -1.0 / (p - 1) if p > 1 else -np.inf
    if not lower < rho < 1:
        raise SpecError(f"CS parameter must lie in ({lower:.3g}, 1) for p={p}, got {rho}")
    return rho * np.ones((p, p)) + (1 - rho) * np.eye(p)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sparse_precision_sigma(p: int, seed=None, density: float = 0.05) -> np.ndarray:
    """Covariance whose inverse is a sparse random matrix with unit diagonal."""
    rng = _rng(seed)
    mask = rng.random((p, p)) < density
    mag = rng.uniform(0.5, 1.0, (p, p)) * rng.choice([-1.0, 1.0], (p, p))
    omega = mask * mag
    omega = (omega + omega.T) / 2
    shift = max(-np.linalg.eigvalsh(omega)[0], 0.0) + 0.05
    omega = omega + shift * np.eye(p)
    d = 1 / np.sqrt(np.diag(omega))
    omega = omega * d[:, None] * d[None, :]
    return spd_inv(omega)


def _random_orthogonal(q: int, rng: np.random.Generator) -> np.ndarray:
    if q == 1:
        return np.ones((1, 1))
    return ortho_group.rvs(q, random_state=rng)


def envelope_block_sigma(p: int, u: int, seed=None) -> np.ndarray:
    """Two-block diagonal covariance O D O^T per block, unit Frobenius norm.

    The first ``u`` coordinates get eigenvalues 5, 10, ..., 5u; the remaining
    ``p - u`` get 2 log(v + 1) for v = 1..p-u.
    """
    if not 1 <= u <= p:
        raise SpecError(f"block size u must satisfy 1 <= u <= p, got u={u}, p={p}")
    rng = _rng(seed)
    S = np.zeros((p, p))
    d1 = 5.0 * np.arange(1, u + 1)
    O1 = _random_orthogonal(u, rng)
    S[:u, :u] = (O1 * d1) @ O1.T
    if p > u:
        d2 = 2 * np.log(np.arange(1, p - u + 1) + 1.0)
        O2 = _random_orthogonal(p - u, rng)
        S[u:, u:] = (O2 * d2) @ O2.T
    S = (S + S.T) / 2
    return S / np.linalg.norm(S)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_tn(mu: np.ndarray, sigmas, rng=None, size: int | None = None) -> np.ndarray:
    """Draw mu + [[Z; Sigma_1^{1/2}, ..., Sigma_M^{1/2}]] with Z standard normal.

    Returns one tensor, or a stack of ``size`` tensors along axis 0.
    """
    rng = _rng(rng)
    mu = np.asarray(mu, dtype=float)
    roots = [spd_sqrt(S) for S in sigmas]
    Z = rng.standard_normal((1 if size is None else size,) + mu.shape)
    X = mu + batch_tucker(Z, roots)
    return X[0] if size is None else X


# ---------------------------------------------------------------------------
# model specifications
# ---------------------------------------------------------------------------

_REQUIRED = ("K", "dims", "n_per_cluster", "covariances", "means")


@dataclass
class SimSpec:
    K: int
    dims: list[int]
    n_per_cluster: int
    covariances: list[dict[str, Any]]
    means: dict[str, Any]
    seed: int = 0
    mean_scale: float = 1.0
    name: str = ""

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        if self.K < 1:
            raise SpecError("K must be at least 1")
        if not self.dims or min(self.dims) < 1:
            raise SpecError(f"dims must be a nonempty list of positive integers, got {self.dims}")
        if self.n_per_cluster < 1:
            raise SpecError("n_per_cluster must be positive")
        if len(self.covariances) != len(self.dims):
            raise SpecError(f"{len(self.dims)} modes but {len(self.covariances)} covariance recipes")
        for m, recipe in enumerate(self.covariances):
            if "kind" not in recipe:
                raise SpecError(f"covariances[{m}]: missing field 'kind'")
            if recipe["kind"] in ("ar", "cs") and "rho" not in recipe:
                raise SpecError(f"covariances[{m}]: missing field 'rho'")
        if "kind" not in self.means:
            raise SpecError("means: missing field 'kind'")

    @property
    def p(self) -> int:
        return int(np.prod(self.dims))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "SimSpec":
        for name in _REQUIRED:
            if name not in doc:
                raise SpecError(f"missing field '{name}'")
        unknown = set(doc) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise SpecError(f"unknown field(s): {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "SimSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"spec is not valid JSON: {exc}") from None
        return cls.from_dict(doc)


@dataclass
class LabeledDataset:
    data: np.ndarray
    labels: np.ndarray
    truth: TnmmParams
    spec: SimSpec | None = field(default=None, repr=False)


def _covariance(recipe: dict, p: int, rng: np.random.Generator) -> np.ndarray:
    kind = recipe["kind"]
    if kind == "identity":
        return np.eye(p)
    if kind == "ar":
        return ar_matrix(p, recipe["rho"])
    if kind == "cs":
        return cs_matrix(p, recipe["rho"])
    if kind == "sparse_precision":
        return sparse_precision_sigma(p, rng, recipe.get("density", 0.05))
    if kind == "envelope":
        if "u" not in recipe:
            raise SpecError("envelope covariance: missing field 'u'")
        return envelope_block_sigma(p, int(recipe["u"]), rng)
    raise SpecError(f"unknown covariance kind {kind!r}")


def _index(entry, dims) -> tuple:
    if len(entry) != len(dims):
        raise SpecError(f"index {entry} does not match {len(dims)} modes")
    out = []
    for e, d in zip(entry, dims):
        if isinstance(e, (list, tuple)):
            a, b = e
            if not 0 <= a < b <= d:
                raise SpecError(f"range {e} out of bounds for a mode of size {d}")
            out.append(slice(a, b))
        else:
            if not 0 <= e < d:
                raise SpecError(f"index {e} out of bounds for a mode of size {d}")
            out.append(int(e))
    return tuple(out)


def _model_rng(spec: SimSpec) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))


def build_model(spec: SimSpec, rng=None) -> TnmmParams:
    """True mixture parameters for a spec (weights 1/K, mu_1 = 0 for B-pattern recipes)."""
    rng = _model_rng(spec) if rng is None else _rng(rng)
    dims = tuple(spec.dims)
    K = spec.K
    sigmas = [_covariance(r, p, rng) for r, p in zip(spec.covariances, dims)]
    kind = spec.means["kind"]
    if kind == "b_pattern":
        Bs = np.zeros((K,) + dims)
        for entry in spec.means.get("blocks", []):
            k = int(entry.get("cluster", -1))
            if not 1 <= k < K:
                raise SpecError(f"b_pattern cluster must lie in 1..{K - 1}, got {k}")
            Bs[(k,) + _index(entry["index"], dims)] = entry["value"]
        mus = batch_tucker(Bs, sigmas)
    elif kind == "corner_uniform":
        corner = spec.means.get("corner")
        if corner is None or len(corner) != len(dims):
            raise SpecError("corner_uniform means: field 'corner' must list one size per mode")
        raw = np.zeros((K,) + dims)
        block = (slice(None),) + tuple(slice(0, int(c)) for c in corner)
        raw[block] = rng.uniform(0.0, 1.0, raw[block].shape)
        mus = raw - raw[0]
    else:
        raise SpecError(f"unknown mean recipe {kind!r}")
    mus = np.concatenate([mus[:1], mus[:1] + spec.mean_scale * (mus[1:] - mus[:1])])
    return TnmmParams(np.full(K, 1.0 / K), mus, identify_sigmas(sigmas))


def generate(spec: SimSpec) -> LabeledDataset:
    """``n_per_cluster`` tensor normal draws per cluster, labels in cluster order."""
    truth = build_model(spec)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    data = np.concatenate(
        [sample_tn(truth.mus[k], truth.sigmas, rng, size=spec.n_per_cluster) for k in range(spec.K)]
    )
    labels = np.repeat(np.arange(spec.K), spec.n_per_cluster)
    return LabeledDataset(data, labels, truth, spec)


# ---------------------------------------------------------------------------
# the benchmark models
# ---------------------------------------------------------------------------

def _block(cluster: int, value: float, rows: int = 6) -> dict:
    return {"cluster": cluster, "index": [[0, rows], 0, 0], "value": value}


def _cov(kind: str, rho: float | None = None, **extra) -> dict:
    out = {"kind": kind}
    if rho is not None:
        out["rho"] = rho
    out.update(extra)
    return out


def _model_table() -> dict[str, dict]:
    m1 = dict(K=2, dims=[10, 10, 4], n_per_cluster=75,
              covariances=[_cov("cs", 0.3), _cov("ar", 0.8), _cov("cs", 0.3)],
              means={"kind": "b_pattern", "blocks": [_block(1, 0.5)]})
    m2 = dict(m1, covariances=[_cov("cs", 0.3), _cov("sparse_precision"), _cov("cs", 0.3)])
    m3 = dict(m1, K=3, covariances=[_cov("cs", 0.3), _cov("ar", 0.8), _cov("cs", 0.5)],
              means={"kind": "b_pattern", "blocks": [_block(1, 0.5), _block(2, -0.5)]})
    m4 = dict(m3, covariances=[_cov("identity"), _cov("ar", 0.8), _cov("identity")],
              means={"kind": "b_pattern", "blocks": [_block(1, 0.8), _block(2, -0.8)]})
    m5 = dict(K=6, dims=[10, 10, 4], n_per_cluster=50,
              covariances=[_cov("ar", 0.9), _cov("cs", 0.6), _cov("ar", 0.9)],
              means={"kind": "b_pattern", "blocks": [_block(k, 0.6 * k) for k in range(1, 6)]})
    m6 = dict(K=6, dims=[10, 10, 4], n_per_cluster=50,
              covariances=[_cov("envelope", u=8), _cov("envelope", u=1), _cov("envelope", u=1)],
              means={"kind": "corner_uniform", "corner": [8, 1, 1]})
    m7 = dict(K=2, dims=[30, 30, 30], n_per_cluster=75,
              covariances=[_cov("cs", 0.5), _cov("ar", 0.8), _cov("cs", 0.5)],
              means={"kind": "b_pattern", "blocks": [_block(1, 0.6)]})
    return {"M1": m1, "M2": m2, "M3": m3, "M4": m4, "M5": m5, "M6": m6, "M7": m7}


MODELS = tuple(_model_table())


def preset(name: str, seed: int = 0, **overrides) -> SimSpec:
    """One of the benchmark models M1..M7 as a :class:`SimSpec`."""
    table = _model_table()
    if name not in table:
        raise SpecError(f"unknown model {name!r}; choose from {', '.join(table)}")
    doc = json.loads(json.dumps(table[name]))
    doc.update(overrides)
    return SimSpec(seed=seed, name=name, **doc)


# ---------------------------------------------------------------------------
# clustering error
# ---------------------------------------------------------------------------

MAX_EXHAUSTIVE_K = 8


def clustering_error(pred, truth, K: int) -> float:
    """Smallest mismatch rate over all relabelings of the predicted clusters."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"label vectors differ in length: {pred.shape} vs {truth.shape}")
    if K > MAX_EXHAUSTIVE_K:
        raise ValueError(f"exhaustive search over {factorial(K)} permutations refused for K={K}")
    for lab in (pred, truth):
        if len(lab) and (lab.min() < 0 or lab.max() >= K):
            raise ValueError(f"labels must lie in 0..{K - 1}")
    n = len(pred)
    if n == 0:
        return 0.0
    C = np.zeros((K, K), dtype=np.int64)
    np.add.at(C, (pred, truth), 1)
    cols = np.arange(K)
    best = max(int(C[list(perm), cols].sum()) for perm in itertools.permutations(range(K)))
    return 1.0 - best / n
