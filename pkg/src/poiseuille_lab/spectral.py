"""Grids, modal fields and discrete operators on the strip [0, 2pi) x [-L, L].

Fields are stored per x-frequency band. A band ``k >= 1`` holds complex
coefficients ``a_k(y_j)`` and represents the real field ``2 Re(a_k e^{ikx})``;
band 0 holds the (real) x-average. The y direction uses uniform interior
nodes ``y_j = -L + j h`` with homogeneous Dirichlet values at ``y = +-L``.

The y-derivative stencils are central finite differences of selectable even
order. The second-derivative matrix uses odd reflection through the boundary
nodes, which keeps it symmetric, negative definite and exactly diagonalised
by the type-I discrete sine transform. The first-derivative matrix uses zero
ghost values, which keeps it exactly skew-symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.fft
import scipy.sparse as sp

__all__ = [
    "D1_STENCILS",
    "D2_STENCILS",
    "Grid",
    "ModeField",
    "band_weight",
    "boundary_flag",
    "derivative_y",
    "from_modes",
    "from_spectrum",
    "inner_product",
    "project",
    "spectrum_x_norm",
    "to_modes",
    "to_spectrum",
    "x_norm",
]

#: One-sided halves of the central stencils, indexed by accuracy order.
#: ``D2_STENCILS[p][m]`` multiplies ``f(y + m h)`` (and ``f(y - m h)``).
D2_STENCILS = {
    2: (-2.0, 1.0),
    4: (-5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0),
    6: (-49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0),
    8: (-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0),
}
#: ``D1_STENCILS[p][m-1]`` multiplies ``f(y + m h) - f(y - m h)``.
D1_STENCILS = {
    2: (1.0 / 2.0,),
    4: (2.0 / 3.0, -1.0 / 12.0),
    6: (3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0),
    8: (4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0),
}

GUARD_TOL = 1e-8


@dataclass(frozen=True)
class Grid:
    """Discrete stage shared by every field.

    Parameters
    ----------
    n_x : int
        Number of collocation points in x on ``[0, 2pi)``. Must be even.
    L : float
        Half width of the truncated y interval.
    n_y : int
        Number of interior y nodes.
    fd_order : int
        Accuracy order of the y stencils (2, 4, 6 or 8).
    """

    n_x: int = 128
    L: float = 10.0
    n_y: int = 512
    fd_order: int = 8

    def __post_init__(self):
        if self.n_x < 4 or self.n_x % 2:
            raise ValueError(f"n_x must be an even integer >= 4, got {self.n_x}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.fd_order not in D2_STENCILS:
            raise ValueError(f"fd_order must be one of {sorted(D2_STENCILS)}")
        if self.n_y < 2 * self.fd_order:
            raise ValueError(f"n_y={self.n_y} is too small for order {self.fd_order}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.n_y + 1)

    @property
    def dealias_cut(self) -> int:
        return self.n_x // 3

    @property
    def n_bands(self) -> int:
        return self.n_x // 2 + 1

    @cached_property
    def y(self) -> np.ndarray:
        return -self.L + self.h * np.arange(1, self.n_y + 1)

    @cached_property
    def x(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_x) / self.n_x

    @cached_property
    def d1(self) -> sp.csr_matrix:
        """First derivative, zero ghosts (skew-symmetric)."""
        n = self.n_y
        coeffs = D1_STENCILS[self.fd_order]
        diags, offsets = [], []
        for m, c in enumerate(coeffs, start=1):
            diags += [np.full(n - m, c), np.full(n - m, -c)]
            offsets += [m, -m]
        return sp.diags(diags, offsets, shape=(n, n), format="csr") / self.h

    @cached_property
    def d2(self) -> sp.csr_matrix:
        """Second derivative, odd reflection through the Dirichlet nodes."""
        n = self.n_y
        coeffs = D2_STENCILS[self.fd_order]
        rows, cols, vals = [], [], []
        for i in range(n):
            for m in range(-len(coeffs) + 1, len(coeffs)):
                c, s = i + m, coeffs[abs(m)]
                if c < -1:
                    c, s = -c - 2, -s
                elif c > n:
                    c, s = 2 * n - c, -s
                elif c in (-1, n):
                    continue
                rows.append(i)
                cols.append(c)
                vals.append(s)
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        mat.sum_duplicates()
        return mat / self.h**2

    @cached_property
    def d2_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of :attr:`d2` in the DST-I basis ``sin(pi m j / (n_y+1))``."""
        theta = np.pi * np.arange(1, self.n_y + 1) / (self.n_y + 1)
        coeffs = D2_STENCILS[self.fd_order]
        sym = coeffs[0] + 2.0 * sum(c * np.cos(m * theta) for m, c in enumerate(coeffs) if m)
        return sym / self.h**2

    @property
    def half_bandwidth(self) -> int:
        return len(D2_STENCILS[self.fd_order]) - 1

    def check_shape(self, values: np.ndarray, physical: bool = False) -> None:
        want = (self.n_x, self.n_y) if physical else (self.n_y,)
        if values.shape[-len(want):] != want:
            raise ValueError(f"shape {values.shape} does not match grid {want}")


def band_weight(k: int, n_x: int) -> float:
    """Factor turning ``h * sum |a_k|^2`` into the L^2 norm on the strip."""
    if k == 0 or 2 * k == n_x:
        return 2.0 * np.pi
    return 4.0 * np.pi


def boundary_flag(values: np.ndarray, tol: float = GUARD_TOL) -> bool:
    """True when the field has not decayed at the truncation boundary."""
    values = np.asarray(values)
    peak = np.max(np.abs(values)) if values.size else 0.0
    if peak == 0.0:
        return False
    edge = max(np.max(np.abs(values[..., 0])), np.max(np.abs(values[..., -1])))
    return bool(edge > tol * peak)


@dataclass(frozen=True, eq=False)
class ModeField:
    """Coefficients ``a_k(y_j)`` of one x-frequency band."""

    k: int
    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("band index must be nonnegative")
        vals = np.asarray(self.values, dtype=complex)
        self.grid.check_shape(vals)
        if self.k == 0:
            peak = np.max(np.abs(vals)) if vals.size else 0.0
            if np.max(np.abs(vals.imag)) > 1e-14 * max(peak, 1e-300):
                raise ValueError("band 0 coefficients must be real")
        object.__setattr__(self, "values", vals)

    @property
    def weight(self) -> float:
        return band_weight(self.k, self.grid.n_x)

    @property
    def guard(self) -> bool:
        return boundary_flag(self.values)

    def with_values(self, values: np.ndarray) -> "ModeField":
        return ModeField(self.k, values, self.grid)

    def __mul__(self, c) -> "ModeField":
        return self.with_values(c * self.values)

    __rmul__ = __mul__

    def __add__(self, other: "ModeField") -> "ModeField":
        _check_pair(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "ModeField") -> "ModeField":
        _check_pair(self, other)
        return self.with_values(self.values - other.values)


def _check_pair(f: ModeField, g: ModeField) -> None:
    if f.k != g.k:
        raise ValueError(f"band mismatch: {f.k} vs {g.k}")
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")


# -- x transforms ---------------------------------------------------------


def to_spectrum(field: np.ndarray, grid: Grid) -> np.ndarray:
    """Band coefficients of a physical field, shape ``(n_x//2 + 1, n_y)``."""
    field = np.asarray(field, dtype=float)
    grid.check_shape(field, physical=True)
    if field.shape != (grid.n_x, grid.n_y):
        raise ValueError(f"expected shape {(grid.n_x, grid.n_y)}, got {field.shape}")
    return scipy.fft.rfft(field, axis=0) / grid.n_x


def from_spectrum(spectrum: np.ndarray, grid: Grid) -> np.ndarray:
    """Inverse of :func:`to_spectrum`; missing high bands are taken as zero."""
    spectrum = np.asarray(spectrum)
    full = np.zeros((grid.n_bands, grid.n_y), dtype=complex)
    full[: spectrum.shape[0]] = spectrum
    return scipy.fft.irfft(full * grid.n_x, n=grid.n_x, axis=0)


def to_modes(field: np.ndarray, grid: Grid) -> list[ModeField]:
    spec = to_spectrum(field, grid)
    spec[0] = spec[0].real
    spec[-1] = spec[-1].real
    return [ModeField(k, spec[k], grid) for k in range(grid.n_bands)]


def from_modes(modes: Iterable[ModeField], grid: Grid) -> np.ndarray:
    spec = np.zeros((grid.n_bands, grid.n_y), dtype=complex)
    for m in modes:
        spec[m.k] += m.values
    return from_spectrum(spec, grid)


def project(field: np.ndarray, selector, grid: Grid) -> np.ndarray:
    """Apply ``P_0`` (``"zero"``), ``P_!=`` (``"nonzero"``) or a single band ``k``."""
    field = np.asarray(field, dtype=float)
    if selector == "zero":
        avg = field.mean(axis=0)
        return np.broadcast_to(avg, field.shape).copy()
    if selector == "nonzero":
        return field - field.mean(axis=0)
    if isinstance(selector, (int, np.integer)) and 0 <= selector < grid.n_bands:
        spec = to_spectrum(field, grid)
        keep = np.zeros_like(spec)
        keep[selector] = spec[selector]
        return from_spectrum(keep, grid)
    raise ValueError(f"unknown mode selector {selector!r}")


# -- y operators and quadrature ------------------------------------------


def derivative_y(mode: ModeField, order: int) -> ModeField:
    """Apply the discrete ``d/dy`` (order 1) or ``d^2/dy^2`` (order 2)."""
    if order == 1:
        op = mode.grid.d1
    elif order == 2:
        op = mode.grid.d2
    else:
        raise ValueError("order must be 1 or 2")
    return mode.with_values(op @ mode.values)


def _weight_values(weight, grid: Grid):
    if weight in (1, None, "1"):
        return 1.0
    if weight == "y":
        return grid.y
    if weight in ("y2", "y^2", "y²"):
        return grid.y**2
    raise ValueError(f"unknown weight {weight!r}")


def inner_product(f: ModeField, g: ModeField, weight=1) -> float:
    """Real L^2 pairing of the two represented real fields."""
    _check_pair(f, g)
    w = _weight_values(weight, f.grid)
    s = np.sum(w * f.values * np.conj(g.values))
    return float(f.weight * f.grid.h * s.real)


def spectrum_x_norm(spectrum: np.ndarray, grid: Grid) -> float:
    """X norm of a field stored as band coefficients (leading axis = band)."""
    spectrum = np.atleast_2d(spectrum)
    w = np.array([band_weight(k, grid.n_x) for k in range(spectrum.shape[0])])
    dens = np.abs(spectrum) ** 2 * (1.0 + grid.y**2)
    return float(np.sqrt(grid.h * np.sum(w * dens.sum(axis=1))))


def x_norm(omega, grid: Grid | None = None) -> float:
    """``(||w||^2 + ||y w||^2)^{1/2}`` for a band, a list of bands or a physical field."""
    if isinstance(omega, ModeField):
        dens = np.abs(omega.values) ** 2 * (1.0 + omega.grid.y**2)
        return float(np.sqrt(omega.weight * omega.grid.h * dens.sum()))
    if isinstance(omega, Sequence) and omega and isinstance(omega[0], ModeField):
        return float(np.sqrt(sum(x_norm(m) ** 2 for m in omega)))
    if grid is None:
        raise ValueError("a grid is required for array input")
    arr = np.asarray(omega)
    if arr.shape == (grid.n_x, grid.n_y) and np.isrealobj(arr):
        dens = arr**2 * (1.0 + grid.y**2)
        return float(np.sqrt(2.0 * np.pi / grid.n_x * grid.h * dens.sum()))
    return spectrum_x_norm(arr, grid)


def dst_forward(values: np.ndarray) -> np.ndarray:
    """Unnormalised DST-I along the last axis, valid for complex input."""
    values = np.asarray(values)
    if np.iscomplexobj(values):
        return scipy.fft.dst(values.real, type=1, axis=-1) + 1j * scipy.fft.dst(
            values.imag, type=1, axis=-1
        )
    return scipy.fft.dst(values, type=1, axis=-1)


def dst_inverse(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    if np.iscomplexobj(values):
        return scipy.fft.idst(values.real, type=1, axis=-1) + 1j * scipy.fft.idst(
            values.imag, type=1, axis=-1
        )
    return scipy.fft.idst(values, type=1, axis=-1)
