"""Stream function recovery and velocity reconstruction per x band."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .spectral import Grid, ModeField, dst_forward, dst_inverse

__all__ = [
    "HelmholtzSolver",
    "banded_storage",
    "commutator_residual",
    "divergence",
    "helmholtz_matrix",
    "helmholtz_solver",
    "inverse_laplacian_stack",
    "solve_stream",
    "velocity_from_stream",
]


def banded_storage(mat: sp.spmatrix, lower: int, upper: int) -> np.ndarray:
    """LAPACK general band layout: ``ab[upper + i - j, j] = mat[i, j]``."""
    coo = sp.coo_matrix(mat)
    n = mat.shape[0]
    keep = (coo.col - coo.row <= upper) & (coo.row - coo.col <= lower)
    row, col = coo.row[keep], coo.col[keep]
    ab = np.zeros((lower + upper + 1, n), dtype=np.result_type(coo.data, float))
    ab[upper + row - col, col] = coo.data[keep]
    return ab


def helmholtz_matrix(k: int, grid: Grid) -> sp.csr_matrix:
    """Discrete ``d^2/dy^2 - k^2`` with Dirichlet ends."""
    return (grid.d2 - k**2 * sp.identity(grid.n_y, format="csr")).tocsr()


class HelmholtzSolver:
    """Cholesky-factored ``-(d^2/dy^2 - k^2)`` for one band.

    The factor is computed once and reused by every :meth:`solve`.
    """

    def __init__(self, k: int, grid: Grid):
        if k < 0:
            raise ValueError("band index must be nonnegative")
        self.k = k
        self.grid = grid
        p = grid.half_bandwidth
        self.matrix = helmholtz_matrix(k, grid)
        upper = banded_storage(-self.matrix, 0, p)
        try:
            self._factor = sla.cholesky_banded(upper, lower=False)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - cannot happen for Dirichlet
            raise RuntimeError(f"Helmholtz operator for k={k} is singular") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Return ``psi`` with ``(d^2/dy^2 - k^2) psi = rhs``."""
        rhs = np.asarray(rhs)
        if np.iscomplexobj(rhs):
            both = np.stack([rhs.real, rhs.imag], axis=-1)
            sol = sla.cho_solve_banded((self._factor, False), -both, check_finite=False)
            return sol[..., 0] + 1j * sol[..., 1]
        return sla.cho_solve_banded((self._factor, False), -rhs, check_finite=False)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values


@lru_cache(maxsize=256)
def helmholtz_solver(k: int, grid: Grid) -> HelmholtzSolver:
    return HelmholtzSolver(k, grid)


def solve_stream(k: int, omega_hat: ModeField) -> ModeField:
    """Stream function of one band: ``(d_yy - k^2) psi = omega``, ``psi(+-L) = 0``."""
    if omega_hat.k != k:
        raise ValueError(f"band mismatch: {omega_hat.k} vs {k}")
    solver = helmholtz_solver(k, omega_hat.grid)
    return omega_hat.with_values(solver.solve(omega_hat.values))


def inverse_laplacian_stack(spectrum: np.ndarray, grid: Grid) -> np.ndarray:
    """Solve all bands at once in the sine basis; row ``k`` uses ``d_yy - k^2``."""
    spectrum = np.asarray(spectrum)
    nb = spectrum.shape[0]
    ks = np.arange(nb)[:, None]
    denom = grid.d2_eigenvalues[None, :] - ks**2
    if not np.iscomplexobj(spectrum):
        return dst_inverse(dst_forward(spectrum) / denom)
    # one transform pair for real and imaginary parts together
    both = np.concatenate([spectrum.real, spectrum.imag])
    sol = dst_inverse(dst_forward(both) / np.concatenate([denom, denom]))
    return sol[:nb] + 1j * sol[nb:]


def velocity_from_stream(psi, grid: Grid | None = None):
    """Return band coefficients of ``u1 = -d_y psi`` and ``u2 = d_x psi``.

    ``psi`` is either a sequence of :class:`ModeField` (any bands) or a
    stacked array whose row index is the band number.
    """
    if isinstance(psi, np.ndarray):
        if grid is None:
            raise ValueError("a grid is required for array input")
        ks = np.arange(psi.shape[0])[:, None]
        u1 = -(grid.d1 @ psi.T).T
        u2 = 1j * ks * psi
        return u1, u2
    modes = list(psi)
    u1 = [m.with_values(-(m.grid.d1 @ m.values)) for m in modes]
    u2 = [m.with_values(1j * m.k * m.values) for m in modes]
    return u1, u2


def divergence(u1: np.ndarray, u2: np.ndarray, grid: Grid) -> np.ndarray:
    """Band coefficients of ``d_x u1 + d_y u2``."""
    ks = np.arange(u1.shape[0])[:, None]
    return 1j * ks * u1 + (grid.d1 @ u2.T).T


def commutator_residual(omega_hat: ModeField) -> float:
    """Relative defect of ``[y, Lap^{-1}] w = 2 Lap^{-2} d_y w`` on the grid."""
    if omega_hat.k < 1:
        raise ValueError("the commutator check needs k >= 1")
    grid = omega_hat.grid
    solver = helmholtz_solver(omega_hat.k, grid)
    w = omega_hat.values
    lhs = grid.y * solver.solve(w) - solver.solve(grid.y * w)
    rhs = 2.0 * solver.solve(solver.solve(grid.d1 @ w))
    scale = max(np.linalg.norm(lhs), np.linalg.norm(rhs))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(lhs - rhs) / scale)
