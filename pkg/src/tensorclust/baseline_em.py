"""Standard EM for the tensor normal mixture, with flip-flop covariance updates.

With K=1 this is the usual tensor normal maximum likelihood fit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tnmm
from .deem import DegenerateClusterError, FitResult, weighted_means
from .tensor_core import batch_tucker
from .tnmm import TnmmParams


class FlipFlopWarning(RuntimeWarning):
    pass


@dataclass
class EmConfig:
    max_iters: int = 50
    mean_shift_tol: float = 0.1
    flipflop_max: int = 20
    flipflop_tol: float = 1e-6
    min_cluster_mass: float = 1.0
    eig_floor: float = 1e-10

    def __post_init__(self):
        if min(self.max_iters, self.flipflop_max) < 1 or min(self.mean_shift_tol, self.flipflop_tol) <= 0:
            raise ValueError("EmConfig limits must be positive")


def _weighted_residuals(data, resp, mus):
    shape = (-1,) + (1,) * (data.ndim - 1)
    return [(data - mus[k]) * np.sqrt(resp[:, k]).reshape(shape) for k in range(resp.shape[1])]


def flipflop_sigma(
    data: np.ndarray,
    resp: np.ndarray,
    mus: np.ndarray,
    sigmas_init: Sequence[np.ndarray],
    config: EmConfig | None = None,
) -> list[np.ndarray]:
    """Cyclic fixed-point updates of the per-mode covariances, others held fixed.

    Each sweep is followed by moving all scale into the first factor
    (sigma_{m,11} = 1 for m > 1), which does not change the Kronecker product.
    """
    config = config or EmConfig()
    data = np.asarray(data, dtype=float)
    n = len(data)
    dims = data.shape[1:]
    M = len(dims)
    p = int(np.prod(dims))
    residuals = _weighted_residuals(data, np.asarray(resp, dtype=float), mus)
    sigmas = [np.array(S, dtype=float) for S in sigmas_init]

    def update(m: int) -> np.ndarray:
        whiten = [None if l == m else tnmm.spd_inv_sqrt(sigmas[l], floor=config.eig_floor) for l in range(M)]
        S = np.zeros((dims[m], dims[m]))
        for R in residuals:
            W = batch_tucker(R, whiten)
            Wm = np.moveaxis(W, m + 1, 0).reshape(dims[m], -1)
            S += Wm @ Wm.T
        return tnmm.repair_spd(S / (n * (p // dims[m])))

    if M == 1:
        return [update(0)]

    for _ in range(config.flipflop_max):
        previous = [S.copy() for S in sigmas]
        for m in range(M):
            sigmas[m] = update(m)
        sigmas = tnmm.identify_sigmas(sigmas)
        change = max(float(np.max(np.abs(a - b))) for a, b in zip(sigmas, previous))
        if change < config.flipflop_tol:
            break
    else:
        warnings.warn(f"flip-flop did not converge in {config.flipflop_max} sweeps", FlipFlopWarning,
                      stacklevel=2)
    return sigmas


def em_fit(data: np.ndarray, K: int, config: EmConfig, init: TnmmParams) -> FitResult:
    """Standard EM: exact posteriors, closed-form weights/means, flip-flop covariances."""
    data = np.asarray(data, dtype=float)
    n = len(data)
    if n <= K:
        raise ValueError(f"need more observations than clusters (n={n}, K={K})")
    if init.K != K or init.dims != data.shape[1:]:
        raise ValueError(f"init has K={init.K}, dims={init.dims}; data needs K={K}, dims={data.shape[1:]}")

    params = init
    shifts: list[float] = []
    logliks: list[float] = []
    converged = False
    t = 0
    for t in range(config.max_iters):
        logf = tnmm.component_log_densities(data, params) + np.log(params.pis)
        top = logf.max(axis=1, keepdims=True)
        logliks.append(float(np.sum(top[:, 0] + np.log(np.sum(np.exp(logf - top), axis=1)))))
        resp = np.exp(logf - top)
        resp /= resp.sum(axis=1, keepdims=True)
        try:
            pis, mus = weighted_means(data, resp, config.min_cluster_mass)
        except DegenerateClusterError as exc:
            raise DegenerateClusterError(str(exc), iteration=t + 1) from None
        sigmas = flipflop_sigma(data, resp, mus, params.sigmas, config)
        new = TnmmParams(pis, mus, sigmas)
        shifts.append(float(np.sum((new.mus - params.mus) ** 2)))
        params = new
        if shifts[-1] <= config.mean_shift_tol:
            converged = True
            break
    logliks.append(tnmm.mixture_loglik(data, params))
    result = FitResult(
        params=params,
        discs=tnmm.discriminants(params),
        responsibilities=resp,
        labels=np.argmax(resp, axis=1),
        iters=t + 1,
        converged=converged,
        mean_shifts=shifts,
        loglik=logliks,
    )
    result.bic = -2 * logliks[-1] + np.log(n) * result.support_size
    return result
