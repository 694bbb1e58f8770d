"""Doubly-enhanced EM for tensor clustering.

Each iteration solves a group-lasso problem for sparse discriminant tensors
(enhanced E-step), turns them into responsibilities, and then updates the
weights, means and per-mode covariances in closed form (enhanced M-step).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tnmm
from ._cd_kernel import cd_pass
from .tensor_core import batch_tucker
from .tnmm import DiscriminantSet, TnmmParams

log = logging.getLogger(__name__)


class DegenerateClusterError(RuntimeError):
    """A cluster kept less than the minimum effective number of observations."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message if iteration is None else f"iteration {iteration}: {message}")
        self.iteration = iteration


class InnerSolverWarning(RuntimeWarning):
    pass


@dataclass
class LambdaSchedule:
    """lambda^(t+1) = kappa * lambda^(t) + (1 - kappa^(t+1)) / (1 - kappa) * c_lambda * sqrt(log p / n)."""

    lambda0: float
    kappa: float = 0.25
    c_lambda: float = 1.0

    def __post_init__(self):
        if not 0 < self.kappa < 0.5:
            raise ValueError("kappa must lie in (0, 1/2)")
        if self.lambda0 < 0 or self.c_lambda <= 0:
            raise ValueError("lambda0 must be >= 0 and c_lambda > 0")

    def next(self, lam: float, t: int, p: int, n: int) -> float:
        k = self.kappa
        return k * lam + (1 - k ** (t + 1)) / (1 - k) * self.c_lambda * np.sqrt(np.log(p) / n)


@dataclass
class DeemConfig:
    lam: float = 0.0
    schedule: LambdaSchedule | None = None
    max_iters: int = 50
    mean_shift_tol: float = 0.1
    inner_tol: float = 1e-6
    inner_max_passes: int = 200
    min_cluster_mass: float = 1.0
    spd_threshold: float = 1e-8
    jitter: float = 1e-8
    max_support: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class FitResult:
    params: TnmmParams
    discs: DiscriminantSet
    responsibilities: np.ndarray
    labels: np.ndarray
    iters: int
    bic: float = float("nan")
    converged: bool = False
    lam: float | None = None
    mean_shifts: list[float] = field(default_factory=list)
    loglik: list[float] = field(default_factory=list)
    path: list[tuple[float, float]] = field(default_factory=list)

    @property
    def support(self) -> set[tuple[int, ...]]:
        return self.discs.support

    @property
    def support_size(self) -> int:
        return self.discs.support_size


# ---------------------------------------------------------------------------
# enhanced E-step
# ---------------------------------------------------------------------------

def _flat(T: np.ndarray) -> np.ndarray:
    """Stack of tensors (K, p_1..p_M) -> (K, p), each row a Fortran-order vectorization."""
    return np.ascontiguousarray(np.stack([t.ravel(order="F") for t in T]))


def _unflat(A: np.ndarray, dims: tuple[int, ...]) -> np.ndarray:
    return np.stack([a.reshape(dims, order="F") for a in A]) if len(A) else np.zeros((0,) + dims)


def _mean_gaps(params: TnmmParams) -> np.ndarray:
    return params.mus[1:] - params.mus[0]


def lambda_max(params: TnmmParams) -> float:
    """Smallest lambda at which every discriminant coefficient is zero."""
    gaps = _mean_gaps(params)
    if len(gaps) == 0:
        return 0.0
    return float(2 * np.max(np.sqrt(np.sum(gaps ** 2, axis=0))))


def default_lambda_grid(params: TnmmParams, n_grid: int = 20, ratio: float = 0.01) -> np.ndarray:
    """Log-spaced grid from :func:`lambda_max` down to ``ratio * lambda_max``."""
    lmax = lambda_max(params)
    return np.geomspace(lmax, lmax * ratio, n_grid)


def group_lasso_objective(params: TnmmParams, lam: float, Bs: np.ndarray) -> float:
    """sum_k (<B_k, [[B_k; Sigma]]> - 2 <B_k, mu_k - mu_1>) + lam * sum_J ||b_J||."""
    fitted = batch_tucker(Bs, params.sigmas)
    gaps = _mean_gaps(params)
    smooth = float(np.sum(Bs * fitted) - 2 * np.sum(Bs * gaps))
    return smooth + lam * float(np.sum(np.sqrt(np.sum(Bs ** 2, axis=0))))


def kkt_residual(params: TnmmParams, lam: float, Bs: np.ndarray) -> float:
    """Largest violation of the group-lasso optimality conditions at ``Bs``."""
    grad = 2 * (batch_tucker(Bs, params.sigmas) - _mean_gaps(params))
    g = grad.reshape(len(grad), -1)
    b = Bs.reshape(len(Bs), -1)
    norms = np.sqrt(np.sum(b ** 2, axis=0))
    active = norms > 0
    worst = 0.0
    if np.any(active):
        r = g[:, active] + lam * b[:, active] / norms[active]
        worst = max(worst, float(np.max(np.sqrt(np.sum(r ** 2, axis=0)))))
    if np.any(~active):
        gn = np.sqrt(np.sum(g[:, ~active] ** 2, axis=0))
        worst = max(worst, float(np.max(np.maximum(gn - lam, 0.0))))
    return worst


def estep_solve_B(
    params: TnmmParams,
    lam: float,
    warm_start: DiscriminantSet | None = None,
    tol: float = 1e-6,
    max_passes: int = 200,
    track_objective: bool = False,
) -> DiscriminantSet:
    """Sparse discriminant tensors by blockwise coordinate descent.

    Cyclic full sweeps alternate with sweeps restricted to the active groups;
    the solver stops after a full sweep in which no coefficient moved by more
    than ``tol``. The fitted field is recomputed from scratch before every
    full sweep to keep the incremental updates from drifting.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    dims = params.dims
    K1 = params.K - 1
    if K1 == 0:
        return DiscriminantSet(np.zeros((0,) + dims))
    sig = [np.ascontiguousarray(S) for S in params.sigmas]
    D = _flat(_mean_gaps(params))
    if warm_start is not None and warm_start.Bs.shape == (K1,) + dims:
        B = _flat(warm_start.Bs)
    else:
        B = np.zeros_like(D)
    sdiag = np.ones(1)
    for S in sig:
        sdiag = np.kron(np.diag(S), sdiag)
    sig_flat = np.concatenate([S.ravel() for S in sig])
    offsets = np.cumsum([0] + [S.size for S in sig[:-1]]).astype(np.int64)
    dim_arr = np.asarray(dims, dtype=np.int64)
    p = D.shape[1]
    ubuf = np.empty(p)
    zbuf = np.empty(K1)
    all_coords = np.arange(p, dtype=np.int64)

    history: list[float] = []

    def record():
        if track_objective:
            history.append(group_lasso_objective(params, lam, _unflat(B, dims)))

    record()
    passes = 0
    converged = False
    while passes < max_passes:
        F = _flat(batch_tucker(_unflat(B, dims), sig))
        change = cd_pass(all_coords, B, F, D, sdiag, sig_flat, offsets, dim_arr, lam, ubuf, zbuf)
        passes += 1
        record()
        if change < tol:
            converged = True
            break
        active = np.flatnonzero(np.any(B != 0, axis=0)).astype(np.int64)
        while passes < max_passes and len(active):
            change = cd_pass(active, B, F, D, sdiag, sig_flat, offsets, dim_arr, lam, ubuf, zbuf)
            passes += 1
            record()
            if change < tol:
                break
    if not converged:
        warnings.warn(
            f"coordinate descent stopped after {passes} passes without reaching tol={tol}",
            InnerSolverWarning,
            stacklevel=2,
        )
    return DiscriminantSet(_unflat(B, dims), converged=converged, passes=passes, history=history)


def estep_weights(data: np.ndarray, params: TnmmParams, discs: DiscriminantSet) -> np.ndarray:
    """Responsibilities from the plug-in posterior formula with the sparse discriminants."""
    return tnmm.batch_posteriors(data, params, discs)


# ---------------------------------------------------------------------------
# enhanced M-step
# ---------------------------------------------------------------------------

def weighted_means(data: np.ndarray, resp: np.ndarray, min_mass: float = 1.0):
    """Mixture weights and responsibility-weighted means; raises on a collapsed cluster."""
    n = len(data)
    mass = resp.sum(axis=0)
    low = np.flatnonzero(mass < min_mass)
    if len(low):
        raise DegenerateClusterError(
            f"cluster {int(low[0])} has effective size {mass[low[0]]:.3g} < {min_mass}"
        )
    mus = np.tensordot(resp.T, data, axes=1) / mass.reshape((-1,) + (1,) * (data.ndim - 1))
    return mass / n, mus


def mstep(
    data: np.ndarray,
    resp: np.ndarray,
    min_mass: float = 1.0,
    spd_threshold: float = 1e-8,
    jitter: float = 1e-8,
) -> TnmmParams:
    """Closed-form weights, means and moment-based per-mode covariances."""
    data = np.asarray(data, dtype=float)
    resp = np.asarray(resp, dtype=float)
    n = len(data)
    if n < 2:
        raise ValueError("need at least two observations")
    if resp.shape[0] != n:
        raise ValueError(f"{n} observations but {resp.shape[0]} responsibility rows")
    pis, mus = weighted_means(data, resp, min_mass)
    dims = data.shape[1:]
    p = int(np.prod(dims))
    scatter = [np.zeros((pm, pm)) for pm in dims]
    s11 = 0.0
    corner = (slice(None),) + (0,) * len(dims)
    for k in range(resp.shape[1]):
        w = np.sqrt(resp[:, k]).reshape((-1,) + (1,) * len(dims))
        R = (data - mus[k]) * w
        s11 += float(np.sum(R[corner] ** 2))
        for m, pm in enumerate(dims):
            Rm = np.moveaxis(R, m + 1, 0).reshape(pm, -1)
            scatter[m] += Rm @ Rm.T
    raw = [
        tnmm.repair_spd(S / (n * (p // pm)), spd_threshold, jitter) for S, pm in zip(scatter, dims)
    ]
    return TnmmParams(pis, mus, tnmm.identify_sigmas(raw, sigma11=s11 / n))


# ---------------------------------------------------------------------------
# driver, BIC and tuning
# ---------------------------------------------------------------------------

def _mean_shift(a: TnmmParams, b: TnmmParams) -> float:
    return float(np.sum((a.mus - b.mus) ** 2))


def fit(data: np.ndarray, K: int, config: DeemConfig, init: TnmmParams) -> FitResult:
    """Run DEEM from ``init`` until the means stop moving or ``max_iters`` is hit."""
    data = np.asarray(data, dtype=float)
    n = len(data)
    if n <= K:
        raise ValueError(f"need more observations than clusters (n={n}, K={K})")
    if init.K != K or init.dims != data.shape[1:]:
        raise ValueError(f"init has K={init.K}, dims={init.dims}; data needs K={K}, dims={data.shape[1:]}")

    params = init
    discs = None
    shifts: list[float] = []
    lam = config.schedule.lambda0 if config.schedule else config.lam
    converged = False
    t = 0
    for t in range(config.max_iters):
        if config.schedule is not None:
            lam = config.schedule.next(lam, t, init.p, n)
        discs = estep_solve_B(params, lam, warm_start=discs, tol=config.inner_tol,
                              max_passes=config.inner_max_passes)
        resp = estep_weights(data, params, discs)
        try:
            new = mstep(data, resp, config.min_cluster_mass, config.spd_threshold, config.jitter)
        except DegenerateClusterError as exc:
            raise DegenerateClusterError(str(exc), iteration=t + 1) from None
        shifts.append(_mean_shift(new, params))
        params = new
        if shifts[-1] <= config.mean_shift_tol:
            converged = True
            break
    result = FitResult(
        params=params,
        discs=discs,
        responsibilities=resp,
        labels=np.argmax(resp, axis=1),
        iters=t + 1,
        converged=converged,
        lam=lam,
        mean_shifts=shifts,
    )
    result.bic = bic(data, result)
    log.debug("DEEM lam=%.4g iters=%d |S|=%d bic=%.2f", lam, result.iters, result.support_size, result.bic)
    return result


def bic(data: np.ndarray, fit: FitResult) -> float:
    """-2 * observed log-likelihood + log(n) * (number of nonzero discriminant coefficients)."""
    n = len(data)
    return -2 * tnmm.mixture_loglik(data, fit.params) + np.log(n) * fit.support_size


def _beats(a: float, b: float, rtol: float = 1e-10) -> bool:
    """a < b by more than rounding noise; BICs equal up to ``rtol`` count as ties."""
    return a < b - rtol * max(abs(a), abs(b), 1.0)


def tune(
    data: np.ndarray,
    K: int,
    lambda_grid: Sequence[float] | None,
    config: DeemConfig,
    init: TnmmParams,
) -> tuple[float, FitResult]:
    """Fit every lambda in the grid and keep the smallest BIC (ties go to the smaller lambda).

    The grid is walked from large to small lambda. Once a fit selects more than
    ``config.max_support`` coefficients (default: n) the smaller values are
    skipped, since denser fits are not competitive and get expensive.
    A grid point whose fit fails or is skipped is recorded with a NaN score.
    """
    grid = default_lambda_grid(init) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    if len(grid) == 0:
        raise ValueError("empty lambda grid")
    grid = np.sort(grid)[::-1]
    limit = len(data) if config.max_support is None else config.max_support
    best: tuple[float, float, FitResult] | None = None
    path: list[tuple[float, float]] = []
    last_error: Exception | None = None
    too_dense = False
    for lam in grid:
        if too_dense:
            path.append((float(lam), float("nan")))
            continue
        try:
            res = fit(data, K, replace(config, lam=float(lam), schedule=None), init)
        except (DegenerateClusterError, np.linalg.LinAlgError) as exc:
            log.info("lambda=%.4g failed: %s", lam, exc)
            path.append((float(lam), float("nan")))
            last_error = exc
            continue
        path.append((float(lam), res.bic))
        if best is None or _beats(res.bic, best[0]) or (not _beats(best[0], res.bic) and lam < best[1]):
            best = (res.bic, float(lam), res)
        too_dense = res.support_size > limit
    if best is None:
        raise last_error
    best[2].path = path
    return best[1], best[2]


def select_k(
    data: np.ndarray,
    k_grid: Sequence[int],
    lambda_grid: Sequence[float] | None,
    config: DeemConfig,
    kmeans_config=None,
) -> tuple[int, FitResult]:
    """Joint BIC choice of the number of clusters and lambda; ties go to the smaller K."""
    from .initializer import KmeansConfig, init_params, kmeans_labels

    if len(k_grid) == 0:
        raise ValueError("empty K grid")
    if kmeans_config is None:
        kmeans_config = KmeansConfig(seed=config.seed)
    best = None
    last_error: Exception | None = None
    for K in sorted(set(int(k) for k in k_grid)):
        if K < 2:
            raise ValueError("K grid entries must be at least 2")
        try:
            labels = kmeans_labels(data, K, kmeans_config)
            init = init_params(data, labels, K)
            _, res = tune(data, K, lambda_grid, config, init)
        except (DegenerateClusterError, np.linalg.LinAlgError, ValueError) as exc:
            log.info("K=%d failed: %s", K, exc)
            last_error = exc
            continue
        if best is None or _beats(res.bic, best[1].bic):
            best = (K, res)
    if best is None:
        raise last_error
    return best
