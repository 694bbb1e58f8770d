"""Compiled inner loop of the blockwise coordinate descent for the discriminant tensors.

Everything works on Fortran-order flattened tensors. ``F`` holds the fitted
field [[B_k; Sigma_1, ..., Sigma_M]] and is kept in sync with ``B`` through
rank-one updates: moving b_{k,J} by d adds d times the J-th column of the
Kronecker covariance, which is itself an outer product of one column per mode.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _kron_column(j, dims, sig_flat, offsets, out):
    # out <- column j of Sigma_M kron ... kron Sigma_1
    L = 1
    out[0] = 1.0
    stride = 1
    for m in range(dims.shape[0]):
        pm = dims[m]
        jm = (j // stride) % pm
        stride *= pm
        base = offsets[m]
        for i in range(pm - 1, -1, -1):
            c = sig_flat[base + i * pm + jm]
            for a in range(L):
                out[a + L * i] = out[a] * c
        L *= pm


@njit(cache=True)
def cd_pass(coords, B, F, D, sdiag, sig_flat, offsets, dims, lam, ubuf, zbuf):
    """One cyclic sweep over ``coords``; returns the largest coefficient change."""
    K1 = B.shape[0]
    p = B.shape[1]
    max_change = 0.0
    for c in range(coords.shape[0]):
        j = coords[c]
        s = sdiag[j]
        nz2 = 0.0
        for k in range(K1):
            z = D[k, j] - F[k, j] + s * B[k, j]
            zbuf[k] = z
            nz2 += z * z
        nz = np.sqrt(nz2)
        if nz <= 0.5 * lam:
            shrink = 0.0
        else:
            shrink = 1.0 - 0.5 * lam / nz
        moved = False
        for k in range(K1):
            new = zbuf[k] / s * shrink
            d = new - B[k, j]
            zbuf[k] = d
            if d != 0.0:
                moved = True
                if abs(d) > max_change:
                    max_change = abs(d)
            B[k, j] = new
        if moved:
            _kron_column(j, dims, sig_flat, offsets, ubuf)
            for k in range(K1):
                d = zbuf[k]
                if d != 0.0:
                    for l in range(p):
                        F[k, l] += d * ubuf[l]
    return max_change
