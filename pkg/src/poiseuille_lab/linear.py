"""Linearized dynamics of one x band about Poiseuille flow.

Per band the perturbation obeys

    d/dt a = -i k y^2 a + 2 i k psi + nu (d_yy - k^2) a,   (d_yy - k^2) psi = a.

Time stepping is Crank-Nicolson on the whole operator. Multiplying the
scheme by the banded Helmholtz matrix removes the inverse from the nonlocal
term, so each step is one banded product and one banded LU solve with a
factorization that is built once per ``dt``. Because the scheme is the
implicit midpoint rule, every quadratic functional whose rate of change is
nonpositive along the semi-discrete flow is nonincreasing along the steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ._kernels import BandStack
from .biot_savart import helmholtz_matrix, helmholtz_solver
from .hypocoercivity import DiagnosticsRecord, HypocoCoefficients, default_coefficients, mode_diagnostics
from .spectral import Grid, ModeField, dst_forward, dst_inverse, x_norm

__all__ = [
    "ConfigurationError",
    "CrankNicolson",
    "LinearModeSystem",
    "SimulationError",
    "TrajectoryRecord",
    "apply_L",
    "dense_operator",
    "dense_propagator_oracle",
    "evolve_linear",
    "gaussian_mode",
    "heat_propagate",
    "random_initial_data",
    "step_linear",
]

DENSE_LIMIT = 256


class ConfigurationError(ValueError):
    """Inputs that the solvers refuse to run with."""


class SimulationError(RuntimeError):
    """A run produced non-finite values."""

    def __init__(self, message: str, last_valid_sample: int):
        super().__init__(message)
        self.last_valid_sample = last_valid_sample


@dataclass(frozen=True)
class LinearModeSystem:
    """The linearized operator on band ``k``.

    ``transport=False`` keeps only the viscous part, which is used by the
    heat-equation oracles.
    """

    k: int
    nu: float
    grid: Grid
    transport: bool = True

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("band index must be nonnegative")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")

    @property
    def helmholtz(self):
        return helmholtz_solver(self.k, self.grid)

    @property
    def has_transport(self) -> bool:
        return self.transport and self.k > 0

    @property
    def dt_max(self) -> float:
        """Largest accepted step: the shear phase ``k y^2 dt`` stays below one radian at ``|y| = L``."""
        if not self.has_transport:
            return math.inf
        return 1.0 / (self.k * self.grid.L**2 + 2.0 * self.k)

    def mode(self, values) -> ModeField:
        return ModeField(self.k, values, self.grid)


def apply_L(sys: LinearModeSystem, a: ModeField) -> ModeField:
    """Right-hand side of the linearized equation on band ``sys.k``."""
    if a.k != sys.k:
        raise ValueError(f"band mismatch: {a.k} vs {sys.k}")
    g, v = sys.grid, a.values
    out = sys.nu * (g.d2 @ v - sys.k**2 * v)
    if sys.has_transport:
        psi = sys.helmholtz.solve(v)
        out = out - 1j * sys.k * g.y**2 * v + 2j * sys.k * psi
    return a.with_values(out)


def dense_operator(sys: LinearModeSystem) -> np.ndarray:
    """Dense matrix of the operator; the Helmholtz inverse is applied column by column."""
    n = sys.grid.n_y
    if n > DENSE_LIMIT:
        raise ConfigurationError(f"dense assembly refused for n_y={n} > {DENSE_LIMIT}")
    lap = helmholtz_matrix(sys.k, sys.grid).toarray()
    op = sys.nu * lap.astype(complex)
    if sys.has_transport:
        inv = sys.helmholtz.solve(np.eye(n))
        op += np.diag(-1j * sys.k * sys.grid.y**2) + 2j * sys.k * inv
    return op


def dense_propagator_oracle(sys: LinearModeSystem, t: float) -> np.ndarray:
    """``exp(t L)`` by scaling and squaring (reference only)."""
    return sla.expm(t * dense_operator(sys))


def heat_propagate(values: np.ndarray, nu: float, t: float, k: int, grid: Grid) -> np.ndarray:
    """Exact ``exp(t nu (d_yy - k^2))`` through the sine eigenbasis of the stencil."""
    decay = np.exp(t * nu * (grid.d2_eigenvalues - k**2))
    return dst_inverse(dst_forward(values) * decay)


class CrankNicolson:
    """Reusable Crank-Nicolson propagator for one system and step size.

    ``lhs``, ``rhs`` and ``left`` are the assembled pencils. Steps are taken
    through the same compiled banded kernel as the nonlinear stepper, so a
    band evolved by either module sees identical rounding.
    """

    def __init__(self, sys: LinearModeSystem, dt: float, check_bound: bool = True):
        if not dt > 0:
            raise ConfigurationError("dt must be positive")
        if check_bound and dt > sys.dt_max * (1.0 + 1e-12):
            raise ConfigurationError(
                f"dt={dt:g} exceeds the step bound {sys.dt_max:.6g} for k={sys.k}, L={sys.grid.L:g}"
            )
        self.sys, self.dt = sys, dt
        n = sys.grid.n_y
        eye = sp.identity(n, format="csr")
        lap = helmholtz_matrix(sys.k, sys.grid)
        if sys.has_transport:
            shear = sp.diags(-1j * sys.k * sys.grid.y**2)
            body = lap @ shear + sys.nu * (lap @ lap)
            self.lhs = (lap - 0.5 * dt * body - 1j * sys.k * dt * eye).tocsr()
            self.rhs = (lap + 0.5 * dt * body + 1j * sys.k * dt * eye).tocsr()
            self.left = lap
            self.width = 2 * sys.grid.half_bandwidth
        else:
            self.lhs = (eye - 0.5 * dt * sys.nu * lap).tocsr()
            self.rhs = (eye + 0.5 * dt * sys.nu * lap).tocsr()
            self.left = eye
            self.width = sys.grid.half_bandwidth
        self._stack = BandStack([self.lhs], [sys.has_transport], sys.nu, dt, sys.grid, self.width, ks=[sys.k])

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``lhs x = rhs`` for one vector."""
        return self._stack.solve(np.asarray(rhs)[None, :])[0]

    def step(self, values: np.ndarray, forcing: np.ndarray | None = None) -> np.ndarray:
        """Advance one step; ``forcing`` is a time-averaged source added to the right side."""
        rhs = self._stack.apply_rhs(np.asarray(values)[None, :])
        if forcing is not None:
            rhs += self.dt * self._stack.apply_left(np.asarray(forcing)[None, :])
        return self._stack.solve(rhs)[0]


_PROPAGATORS: dict = {}


def _propagator(sys: LinearModeSystem, dt: float) -> CrankNicolson:
    key = (sys, float(dt))
    prop = _PROPAGATORS.get(key)
    if prop is None:
        if len(_PROPAGATORS) > 64:
            _PROPAGATORS.clear()
        prop = _PROPAGATORS[key] = CrankNicolson(sys, dt)
    return prop


def step_linear(sys: LinearModeSystem, a: ModeField, dt: float) -> ModeField:
    """One Crank-Nicolson step of the linearized equation."""
    if a.k != sys.k:
        raise ValueError(f"band mismatch: {a.k} vs {sys.k}")
    new = _propagator(sys, dt).step(a.values)
    if sys.k == 0:
        new = new.real
    return a.with_values(new)


@dataclass
class TrajectoryRecord:
    """Sampled output of :func:`evolve_linear`."""

    k: int
    nu: float
    dt: float
    times: np.ndarray
    diagnostics: list[DiagnosticsRecord]
    states: list[ModeField] | None
    final: ModeField
    n_steps: int
    max_l2_increase: float = 0.0
    max_monotone_increase: float = 0.0
    step_l2: np.ndarray | None = field(default=None, repr=False)
    step_monotone: np.ndarray | None = field(default=None, repr=False)

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.diagnostics])


def _monotone_functional(sys: LinearModeSystem, v: np.ndarray) -> float:
    """``||y d_x w||^2 + 2 ||grad d_x psi||^2`` up to the band weight."""
    if sys.k == 0:
        return 0.0
    psi = sys.helmholtz.solve(v)
    y = sys.grid.y
    return sys.k**2 * (np.vdot(y * v, y * v).real - 2.0 * np.vdot(v, psi).real)


def evolve_linear(
    sys: LinearModeSystem,
    a0: ModeField,
    T: float,
    dt: float,
    sample_every: int = 10,
    coeffs: HypocoCoefficients | None = None,
    keep_states: bool = False,
    record_steps: bool = False,
) -> TrajectoryRecord:
    """Integrate to time ``T`` with steps no longer than ``dt``.

    The step is shortened to ``T / ceil(T / dt)`` so the run ends exactly at
    ``T``. Diagnostics are taken every ``sample_every`` steps and at the end.
    Per-step increases of ``||w||^2`` and of the monotone weighted
    combination are tracked relative to their current values.
    """
    if a0.k != sys.k:
        raise ValueError(f"band mismatch: {a0.k} vs {sys.k}")
    if not T >= 0:
        raise ConfigurationError("T must be nonnegative")
    if sample_every < 1:
        raise ConfigurationError("sample_every must be >= 1")
    coeffs = coeffs or default_coefficients()
    n_steps = int(math.ceil(T / dt - 1e-9)) if T > 0 else 0
    h = T / n_steps if n_steps else dt
    prop = _propagator(sys, h)

    v = a0.values.copy()
    diags = [mode_diagnostics(sys.mode(v), sys.nu, coeffs, 0.0)]
    states = [sys.mode(v)] if keep_states else None
    l2 = np.vdot(v, v).real
    mono = _monotone_functional(sys, v)
    worst_l2 = worst_mono = 0.0
    trace_l2 = [l2] if record_steps else None
    trace_mono = [mono] if record_steps else None

    for n in range(1, n_steps + 1):
        v = prop.step(v)
        if sys.k == 0:
            v = v.real.astype(complex)
        l2_new = np.vdot(v, v).real
        if not math.isfinite(l2_new):
            raise SimulationError(f"non-finite state at step {n}", len(diags) - 1)
        mono_new = _monotone_functional(sys, v)
        if l2 > 0:
            worst_l2 = max(worst_l2, (l2_new - l2) / l2)
        if mono > 0:
            worst_mono = max(worst_mono, (mono_new - mono) / mono)
        l2, mono = l2_new, mono_new
        if record_steps:
            trace_l2.append(l2)
            trace_mono.append(mono)
        if n % sample_every == 0 or n == n_steps:
            diags.append(mode_diagnostics(sys.mode(v), sys.nu, coeffs, n * h))
            if keep_states:
                states.append(sys.mode(v.copy()))

    return TrajectoryRecord(
        k=sys.k,
        nu=sys.nu,
        dt=h,
        times=np.array([d.t for d in diags]),
        diagnostics=diags,
        states=states,
        final=sys.mode(v),
        n_steps=n_steps,
        max_l2_increase=worst_l2,
        max_monotone_increase=worst_mono,
        step_l2=None if trace_l2 is None else np.array(trace_l2),
        step_monotone=None if trace_mono is None else np.array(trace_mono),
    )


def gaussian_mode(grid: Grid, k: int = 0, width: float = 1.0) -> ModeField:
    """``exp(-y^2 / width^2)`` on band ``k``."""
    return ModeField(k, np.exp(-(grid.y**2) / width**2), grid)


def random_initial_data(
    grid: Grid,
    k: int,
    seed: int,
    n_waves: int = 6,
    max_wavenumber: float = 3.0,
) -> ModeField:
    """Seeded band-limited profile times ``exp(-y^2/2)``, unit X norm."""
    rng = np.random.default_rng(seed)
    kappa = np.linspace(0.0, max_wavenumber, n_waves + 1)
    amp = rng.standard_normal((2, n_waves + 1))
    if k > 0:
        amp = amp + 1j * rng.standard_normal((2, n_waves + 1))
    y = grid.y[:, None]
    profile = (amp[0] * np.cos(kappa * y) + amp[1] * np.sin(kappa * y)).sum(axis=1)
    mode = ModeField(k, profile * np.exp(-(grid.y**2) / 2.0), grid)
    return mode * (1.0 / x_norm(mode))
