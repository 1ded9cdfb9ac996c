"""Compiled batched band kernels shared by the linear and nonlinear steppers.

All bands share one band width, so a whole spectrum is advanced with one
call instead of one LAPACK call per band.
"""

from __future__ import annotations

from functools import lru_cache

import numba
import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

from .biot_savart import banded_storage

__all__ = ["BandStack", "band_lu_solve", "grid_stencils", "stencil_apply"]


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def band_lu_solve(low, piv, upper, rhs):
    """Solve with factors from ``zgbtrf`` for every band (0-based pivots).

    ``low[b, j, i]`` is the multiplier of row ``j + 1 + i`` in column ``j``.
    ``upper[b, i, m]`` is ``U[i, i + m]``, so both sweeps read contiguous memory.
    """
    nb, n, w = low.shape
    kd = upper.shape[2] - 1
    x = rhs.copy()
    for b in range(nb):
        xb = x[b]
        for j in range(n - 1):
            p = piv[b, j]
            if p != j:
                tmp = xb[p]
                xb[p] = xb[j]
                xb[j] = tmp
            xj = xb[j]
            col = low[b, j]
            for i in range(min(w, n - j - 1)):
                xb[j + 1 + i] -= col[i] * xj
        for i in range(n - 1, -1, -1):
            row = upper[b, i]
            acc = xb[i]
            for m in range(1, min(kd, n - 1 - i) + 1):
                acc -= row[m] * xb[i + m]
            xb[i] = acc / row[0]
    return x


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def stencil_apply(dia, x, shift):
    """``y[b] = A x[b] - shift[b] x[b]``; ``dia[i, d] = A[i, i + d - w]`` for one real banded ``A``."""
    nb, n = x.shape
    nd = dia.shape[1]
    w = nd // 2
    y = np.empty_like(x)
    for b in range(nb):
        xb = x[b]
        sb = shift[b]
        for i in range(n):
            acc = -sb * xb[i]
            row = dia[i]
            for d in range(max(0, w - i), min(nd, n + w - i)):
                acc += row[d] * xb[i + d - w]
            y[b, i] = acc
    return y


def _diagonals(mat: sp.spmatrix, w: int) -> np.ndarray:
    """Row-aligned storage ``dia[i, d] = mat[i, i + d - w]``."""
    coo = sp.coo_matrix(mat)
    dia = np.zeros((mat.shape[0], 2 * w + 1), dtype=coo.data.dtype)
    d = coo.col - coo.row + w
    keep = (d >= 0) & (d <= 2 * w)
    dia[coo.row[keep], d[keep]] = coo.data[keep]
    return dia


@lru_cache(maxsize=16)
def grid_stencils(grid) -> tuple[np.ndarray, np.ndarray]:
    """Row-aligned first and second difference matrices of ``grid``."""
    p = grid.half_bandwidth
    d1 = np.ascontiguousarray(_diagonals(grid.d1, p).real)
    d2 = np.ascontiguousarray(_diagonals(grid.d2, p).real)
    return d1, d2


class BandStack:
    """Crank-Nicolson pencils of several bands on one grid, padded to one band width.

    The right-hand operators are applied through the shared second-difference
    stencil rather than stored per band, which keeps the working set in cache.
    Row ``b`` holds band ``ks[b]``; by default the rows are bands ``0..K``.
    """

    def __init__(self, lhs, transport, nu: float, dt: float, grid, width: int, ks=None):
        n = grid.n_y
        nb = len(lhs)
        self.width, self.nu, self.dt = width, nu, dt
        self.ks = np.arange(nb, dtype=float) if ks is None else np.asarray(ks, dtype=float)
        if self.ks.shape != (nb,):
            raise ValueError("one band index per pencil is required")
        self.transport = np.asarray(transport, bool)[:, None]
        self.y2 = grid.y**2
        self.d2 = grid_stencils(grid)[1]
        kd = 2 * width
        lu = np.zeros((nb, 3 * width + 1, n), dtype=complex)
        piv = np.zeros((nb, n), dtype=np.int64)
        for b, m in enumerate(lhs):
            ab = np.zeros((3 * width + 1, n), dtype=complex)
            ab[width:] = banded_storage(m, width, width)
            lu[b], p, info = lapack.zgbtrf(ab, width, width)
            if info != 0:  # pragma: no cover - the pencil is nonsingular
                raise RuntimeError(f"banded factorization failed (info={info})")
            piv[b] = p
        self.piv = piv
        self.low = np.ascontiguousarray(lu[:, kd + 1 :, :].transpose(0, 2, 1))
        # U[i, i + m] sits at ab[kd - m, i + m]
        upper = np.zeros((nb, n, kd + 1), dtype=complex)
        for m in range(kd + 1):
            upper[:, : n - m, m] = lu[:, kd - m, m:]
        self.upper = upper

    def laplacian(self, x: np.ndarray) -> np.ndarray:
        return stencil_apply(self.d2, np.ascontiguousarray(x, dtype=complex), self.ks**2)

    def apply_rhs(self, x: np.ndarray) -> np.ndarray:
        half, nu = 0.5 * self.dt, self.nu
        lap = self.laplacian(x)
        ik = 1j * self.ks[:, None]
        # Lap(-i k y^2 x) + nu Lap^2 x in one stencil pass
        body = self.laplacian(-ik * self.y2 * x + nu * lap)
        moving = lap + half * body + ik * self.dt * x
        return np.where(self.transport, moving, x + half * nu * lap)

    def apply_left(self, x: np.ndarray) -> np.ndarray:
        return np.where(self.transport, self.laplacian(x), x)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return band_lu_solve(self.low, self.piv, self.upper, np.ascontiguousarray(b, dtype=complex))
