"""K-means start for DEEM and EM: Lloyd on vectorized tensors, then moment estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .deem import mstep
from .tnmm import TnmmParams


class EmptyClusterError(RuntimeError):
    pass


@dataclass
class KmeansConfig:
    restarts: int = 10
    max_lloyd_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X ** 2).sum(1)[:, None] - 2 * X @ C.T + (C ** 2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = _sq_dists(X, np.array(centers))[:, 0]
    for _ in range(1, K):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, _sq_dists(X, X[idx][None])[:, 0])
    return np.array(centers)


def lloyd(X: np.ndarray, centers: np.ndarray, max_iters: int = 100):
    """Lloyd iterations from ``centers``.

    Returns (labels, centers, inertia trace). An emptied cluster is re-seeded
    at the point farthest from its current center.
    """
    centers = centers.copy()
    K = len(centers)
    trace = []
    labels = None
    for _ in range(max_iters):
        d = _sq_dists(X, centers)
        new_labels = np.argmin(d, axis=1)
        trace.append(float(d[np.arange(len(X)), new_labels].sum()))
        for k in range(K):
            if not np.any(new_labels == k):
                own = d[np.arange(len(X)), new_labels]
                far = int(np.argmax(own))
                new_labels[far] = k
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for k in range(K):
            members = labels == k
            if np.any(members):
                centers[k] = X[members].mean(axis=0)
    d = _sq_dists(X, centers)
    trace.append(float(d[np.arange(len(X)), labels].sum()))
    return labels, centers, trace


def kmeans_labels(data: np.ndarray, K: int, config: KmeansConfig | None = None) -> np.ndarray:
    """Best-of-``restarts`` K-means (k-means++ seeding) labels, 0-based."""
    config = config or KmeansConfig()
    X = np.asarray(data, dtype=float).reshape(len(data), -1)
    n = len(X)
    if n < K:
        raise ValueError(f"cannot form {K} clusters from {n} observations")
    if K == 1:
        return np.zeros(n, dtype=int)
    rng = np.random.default_rng(config.seed)
    best_labels, best_score = None, np.inf
    for _ in range(config.restarts):
        labels, centers, _ = lloyd(X, kmeans_pp(X, K, rng), config.max_lloyd_iters)
        if len(np.unique(labels)) < K:
            continue
        score = float(((X - centers[labels]) ** 2).sum())
        if score < best_score:
            best_labels, best_score = labels, score
    if best_labels is None:
        raise EmptyClusterError(f"every restart left a cluster empty (K={K}, n={n})")
    return best_labels


def init_params(data: np.ndarray, labels: np.ndarray, K: int) -> TnmmParams:
    """Initial weights, within-group means and scaled per-mode scatter matrices."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= K or len(np.unique(labels)) != K:
        raise ValueError(f"labels must cover 0..{K - 1}")
    onehot = np.eye(K)[labels]
    return mstep(data, onehot)
