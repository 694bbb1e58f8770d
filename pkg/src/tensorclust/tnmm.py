"""Tensor normal mixture model: parameters, densities, discriminants, posteriors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .tensor_core import batch_tucker, inner, tucker


class NotSPDError(np.linalg.LinAlgError):
    """A covariance factor is not symmetric positive definite."""


# ---------------------------------------------------------------------------
# small symmetric-matrix helpers (all via eigh; factors are at most ~30x30)
# ---------------------------------------------------------------------------

def _eigh_spd(S: np.ndarray, floor: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    S = np.asarray(S, dtype=float)
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    if floor > 0:
        w = np.maximum(w, floor)
    elif w[0] <= 0:
        raise NotSPDError(f"matrix is not positive definite (min eigenvalue {w[0]:.3g})")
    return w, V


def spd_inv(S: np.ndarray) -> np.ndarray:
    w, V = _eigh_spd(S)
    return (V / w) @ V.T


def spd_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = _eigh_spd(S)
    return (V * np.sqrt(w)) @ V.T


def spd_inv_sqrt(S: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Symmetric inverse square root; a positive ``floor`` clamps small eigenvalues instead of raising."""
    w, V = _eigh_spd(S, floor=floor)
    return (V / np.sqrt(w)) @ V.T


def spd_logdet(S: np.ndarray) -> float:
    w, _ = _eigh_spd(S)
    return float(np.sum(np.log(w)))


def repair_spd(S: np.ndarray, threshold: float = 1e-8, jitter: float = 1e-8) -> np.ndarray:
    """Symmetrize, and add ``jitter * I`` when the smallest eigenvalue is below ``threshold``."""
    S = 0.5 * (S + S.T)
    if np.linalg.eigvalsh(S)[0] < threshold:
        S = S + jitter * np.eye(S.shape[0])
    return S


def identify_sigmas(sigmas: Sequence[np.ndarray], sigma11: float | None = None) -> list[np.ndarray]:
    """Impose sigma_{m,11} = 1 for every mode after the first.

    With ``sigma11=None`` the removed scales are folded into the first factor,
    which leaves the Kronecker product unchanged. Otherwise the first factor is
    rescaled so that its (1,1) entry equals ``sigma11``.
    """
    out = [np.array(S, dtype=float) for S in sigmas]
    carried = 1.0
    for m in range(1, len(out)):
        s = out[m][0, 0]
        out[m] = out[m] / s
        carried *= s
    if sigma11 is None:
        out[0] = out[0] * carried
    else:
        out[0] = out[0] * (sigma11 / out[0][0, 0])
    return out


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

@dataclass
class TnmmParams:
    """Mixture weights ``pis`` (K,), means ``mus`` (K, p_1..p_M), shared per-mode covariances."""

    pis: np.ndarray
    mus: np.ndarray
    sigmas: list[np.ndarray]

    def __post_init__(self):
        self.pis = np.asarray(self.pis, dtype=float)
        self.mus = np.asarray(self.mus, dtype=float)
        self.sigmas = [np.asarray(S, dtype=float) for S in self.sigmas]

    @property
    def K(self) -> int:
        return len(self.pis)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.mus.shape[1:])

    @property
    def p(self) -> int:
        return int(np.prod(self.dims))

    def validate(self, tol: float = 1e-8) -> None:
        """Raise ``ValueError`` if any model invariant is violated."""
        if self.mus.shape[0] != self.K:
            raise ValueError(f"{self.K} weights but {self.mus.shape[0]} means")
        if abs(self.pis.sum() - 1.0) > tol or np.any(self.pis <= 0) or np.any(self.pis >= 1 + tol):
            raise ValueError(f"mixture weights must lie in (0,1) and sum to 1, got {self.pis}")
        if len(self.sigmas) != len(self.dims):
            raise ValueError(f"{len(self.dims)}-way means but {len(self.sigmas)} covariance factors")
        for m, (S, pm) in enumerate(zip(self.sigmas, self.dims)):
            if S.shape != (pm, pm):
                raise ValueError(f"Sigma_{m} has shape {S.shape}, expected {(pm, pm)}")
            if np.max(np.abs(S - S.T)) > 1e-10:
                raise ValueError(f"Sigma_{m} is not symmetric")
            if np.linalg.eigvalsh(S)[0] <= 0:
                raise ValueError(f"Sigma_{m} is not positive definite")
            if m > 0 and abs(S[0, 0] - 1.0) > tol:
                raise ValueError(f"identifiability: Sigma_{m}[0,0] = {S[0, 0]}, expected 1")

    def inverses(self) -> list[np.ndarray]:
        return [spd_inv(S) for S in self.sigmas]

    def permuted(self, order: Sequence[int]) -> "TnmmParams":
        """Relabel clusters: new cluster j is old cluster ``order[j]``."""
        order = list(order)
        return TnmmParams(self.pis[order], self.mus[order], [S.copy() for S in self.sigmas])


@dataclass
class DiscriminantSet:
    """Discriminant tensors B_2..B_K stacked as ``Bs`` with shape (K-1, p_1..p_M)."""

    Bs: np.ndarray
    converged: bool = True
    passes: int = 0
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def support(self) -> set[tuple[int, ...]]:
        """Nonzero coefficients as (k, j_1, ..., j_M) with k counted from 1 (cluster 2 is k=1)."""
        return {(int(idx[0]) + 1,) + tuple(int(i) for i in idx[1:]) for idx in np.argwhere(self.Bs != 0)}

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.Bs))

    @property
    def selected_variables(self) -> np.ndarray:
        """Boolean mask over coordinates with a nonzero coefficient in any B_k."""
        return np.any(self.Bs != 0, axis=0)


# ---------------------------------------------------------------------------
# model operations
# ---------------------------------------------------------------------------

def _quad_forms(data: np.ndarray, mu: np.ndarray, inv_sqrts: Sequence[np.ndarray]) -> np.ndarray:
    W = batch_tucker(data - mu, inv_sqrts)
    return np.sum(W.reshape(len(W), -1) ** 2, axis=1)


def _log_norm_const(sigmas: Sequence[np.ndarray], dims: Sequence[int]) -> float:
    p = int(np.prod(dims))
    return -0.5 * p * np.log(2 * np.pi) - 0.5 * sum(
        (p // pm) * spd_logdet(S) for S, pm in zip(sigmas, dims)
    )


def log_density(X: np.ndarray, mu: np.ndarray, sigmas: Sequence[np.ndarray]) -> float:
    """Tensor normal log-density of a single observation."""
    X = np.asarray(X, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if X.shape != mu.shape or len(sigmas) != X.ndim:
        raise ValueError(f"non-conformable tensor {X.shape}, mean {mu.shape}, {len(sigmas)} factors")
    R = X - mu
    quad = inner(tucker(R, [spd_inv(S) for S in sigmas]), R)
    return _log_norm_const(sigmas, X.shape) - 0.5 * quad


def component_log_densities(data: np.ndarray, params: TnmmParams) -> np.ndarray:
    """``(n, K)`` array of log f_k(X_i)."""
    data = np.asarray(data, dtype=float)
    inv_sqrts = [spd_inv_sqrt(S) for S in params.sigmas]
    const = _log_norm_const(params.sigmas, params.dims)
    return np.column_stack(
        [const - 0.5 * _quad_forms(data, params.mus[k], inv_sqrts) for k in range(params.K)]
    )


def mixture_loglik(data: np.ndarray, params: TnmmParams) -> float:
    """Observed-data log-likelihood sum_i log sum_k pi_k f_k(X_i)."""
    logf = component_log_densities(data, params)
    return float(np.sum(logsumexp(logf + np.log(params.pis), axis=1)))


def discriminants(params: TnmmParams) -> DiscriminantSet:
    """B_k = [[mu_k - mu_1; Sigma_1^-1, ..., Sigma_M^-1]] for k = 2..K."""
    invs = params.inverses()
    diffs = params.mus[1:] - params.mus[0]
    return DiscriminantSet(batch_tucker(diffs, invs) if len(diffs) else np.zeros((0,) + params.dims))


def cluster_scores(data: np.ndarray, params: TnmmParams, discs: DiscriminantSet) -> np.ndarray:
    """``(n, K)`` scores log pi_k + <X_i - (mu_1 + mu_k)/2, B_k>, with B_1 = 0."""
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    flat = data.reshape(n, -1)
    scores = np.empty((n, params.K))
    scores[:, 0] = np.log(params.pis[0])
    for k in range(1, params.K):
        b = discs.Bs[k - 1].ravel()
        mid = 0.5 * (params.mus[k] + params.mus[0]).ravel()
        scores[:, k] = np.log(params.pis[k]) + flat @ b - mid @ b
    return scores


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    out = np.exp(scores - scores.max(axis=1, keepdims=True))
    out /= out.sum(axis=1, keepdims=True)
    return out


def batch_posteriors(data: np.ndarray, params: TnmmParams, discs: DiscriminantSet) -> np.ndarray:
    return _softmax_rows(cluster_scores(data, params, discs))


def posteriors(X: np.ndarray, params: TnmmParams, discs: DiscriminantSet) -> np.ndarray:
    """Posterior cluster probabilities of one observation, computed from the discriminants."""
    return batch_posteriors(np.asarray(X, dtype=float)[None], params, discs)[0]


def optimal_assign(X: np.ndarray, params: TnmmParams, discs: DiscriminantSet) -> int:
    """Bayes-optimal cluster (0-based); ties go to the smallest index."""
    return int(np.argmax(cluster_scores(np.asarray(X, dtype=float)[None], params, discs)[0]))


def optimal_labels(data: np.ndarray, params: TnmmParams, discs: DiscriminantSet | None = None) -> np.ndarray:
    if discs is None:
        discs = discriminants(params)
    return np.argmax(cluster_scores(data, params, discs), axis=1)


def separation(params: TnmmParams) -> float:
    """Mahalanobis-type separation Delta between the two cluster means."""
    if params.K != 2:
        raise ValueError(f"separation is defined for K = 2, got K = {params.K}")
    d = params.mus[1] - params.mus[0]
    return inner(d, tucker(d, params.inverses()))
