"""Dense tensor algebra kernels.

Tensors are plain ``numpy.ndarray`` objects of shape ``(p_1, ..., p_M)``.
The canonical vectorization lists entries with the *first* index running
fastest (Fortran order), so that

    vec([[C; G_1, ..., G_M]]) == (G_M kron ... kron G_1) vec(C)

holds with the Kronecker factors in that reversed order.

Modes are 0-based, like numpy axes.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def _check_mode(T: np.ndarray, mode: int) -> None:
    if not 0 <= mode < T.ndim:
        raise ValueError(f"mode {mode} out of range for a {T.ndim}-way tensor")


def vectorize(T: np.ndarray) -> np.ndarray:
    """Return vec(T), first index fastest."""
    return np.asarray(T, dtype=float).ravel(order="F")


def unvectorize(v: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    v = np.asarray(v, dtype=float)
    if v.size != int(np.prod(dims)):
        raise ValueError(f"vector of length {v.size} does not fit dims {tuple(dims)}")
    return v.reshape(tuple(dims), order="F")


def matricize(T: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding, shape ``(p_mode, prod of the other dims)``.

    Entry ``T[i_1, ..., i_M]`` lands in row ``i_mode``; the remaining indices
    are laid out along the columns with the lowest remaining mode fastest.
    """
    T = np.asarray(T, dtype=float)
    _check_mode(T, mode)
    return np.moveaxis(T, mode, 0).reshape(T.shape[mode], -1, order="F")


def fold(A: np.ndarray, mode: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`matricize`."""
    dims = tuple(int(d) for d in dims)
    if not 0 <= mode < len(dims):
        raise ValueError(f"mode {mode} out of range for dims {dims}")
    moved = (dims[mode],) + dims[:mode] + dims[mode + 1:]
    return np.moveaxis(np.asarray(A, dtype=float).reshape(moved, order="F"), 0, mode)


def mode_mult(T: np.ndarray, G: np.ndarray, mode: int) -> np.ndarray:
    """Mode product ``T x_mode G`` for a ``d x p_mode`` matrix ``G``."""
    T = np.asarray(T, dtype=float)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    _check_mode(T, mode)
    if G.shape[1] != T.shape[mode]:
        raise ValueError(
            f"matrix with {G.shape[1]} columns cannot act on mode {mode} of size {T.shape[mode]}"
        )
    return np.moveaxis(np.tensordot(G, T, axes=(1, mode)), 0, mode)


def tucker(T: np.ndarray, Gs: Sequence[np.ndarray | None]) -> np.ndarray:
    """Tucker product ``[[T; G_1, ..., G_M]]``; a ``None`` factor is skipped (identity)."""
    T = np.asarray(T, dtype=float)
    if len(Gs) != T.ndim:
        raise ValueError(f"need {T.ndim} factor matrices, got {len(Gs)}")
    out = T
    for m, G in enumerate(Gs):
        if G is not None:
            out = mode_mult(out, G, m)
    return out


def batch_tucker(X: np.ndarray, Gs: Sequence[np.ndarray | None]) -> np.ndarray:
    """Apply the same Tucker product to every tensor stacked along axis 0."""
    out = np.asarray(X, dtype=float)
    if len(Gs) != out.ndim - 1:
        raise ValueError(f"need {out.ndim - 1} factor matrices, got {len(Gs)}")
    for m, G in enumerate(Gs):
        if G is not None:
            out = np.moveaxis(np.tensordot(G, out, axes=(1, m + 1)), 0, m + 1)
    return out


def inner(A: np.ndarray, B: np.ndarray) -> float:
    """Tensor inner product, the sum of elementwise products."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    return float(np.vdot(A, B))


def frobenius_norm(T: np.ndarray) -> float:
    return float(np.sqrt(inner(T, T)))

