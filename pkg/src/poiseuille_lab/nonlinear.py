"""Nonlinear perturbation dynamics, shear-mode diagnostics and threshold runs.

The state is the stack of band coefficients ``omega[k]`` for
``k = 0..dealias_cut``; higher bands are identically zero, which is the 2/3
rule. The quadratic term is evaluated in divergence form ``div(u omega)``
by transforming to x collocation points, multiplying pointwise and
transforming back. Each step treats the linearized operator with
Crank-Nicolson (the same propagators as the linear module) and the
quadratic term with a Heun predictor-corrector.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft

from ._kernels import BandStack, grid_stencils, stencil_apply
from .biot_savart import inverse_laplacian_stack, velocity_from_stream
from .hypocoercivity import (
    HypocoCoefficients,
    c0_constant,
    default_coefficients,
    fit_decay_rate,
    kappa0_constant,
    rate_formula_nu,
)
from .linear import ConfigurationError, CrankNicolson, LinearModeSystem, SimulationError
from .spectral import Grid, boundary_flag

__all__ = [
    "BootstrapReport",
    "DtPolicy",
    "NonlinearSample",
    "NonlinearSolver",
    "NonlinearState",
    "NonlinearTrajectory",
    "AprioriReport",
    "ShearRecord",
    "SweepCell",
    "SweepReport",
    "ThresholdConfig",
    "amplitude",
    "bootstrap_monitor",
    "convolution_nonlinear_term",
    "load_checkpoint",
    "nonlinear_term",
    "apriori_monitor",
    "run_threshold",
    "run_threshold_sweep",
    "save_checkpoint",
    "shear_diagnostics",
    "spectrum_diagnostics",
    "step_nonlinear",
    "threshold_initial_data",
]

FLUSH_LEVEL = 1e-250


def _band_weights(n_bands: int, grid: Grid) -> np.ndarray:
    w = np.full(n_bands, 4.0 * np.pi)
    w[0] = 2.0 * np.pi
    if 2 * (n_bands - 1) == grid.n_x:
        w[-1] = 2.0 * np.pi
    return w


def _dy(grid: Grid, stack: np.ndarray, second: bool = False) -> np.ndarray:
    """First or second y difference of every row of ``stack``."""
    dia = grid_stencils(grid)[1 if second else 0]
    stack = np.asarray(stack)
    flat = np.ascontiguousarray(stack.reshape(-1, grid.n_y), dtype=complex)
    out = stencil_apply(dia, flat, np.zeros(flat.shape[0])).reshape(stack.shape)
    return out if np.iscomplexobj(stack) else out.real


@dataclass
class NonlinearState:
    """Band coefficients of the vorticity perturbation at time ``t``."""

    omega: np.ndarray
    grid: Grid
    t: float = 0.0

    def __post_init__(self):
        self.omega = np.array(self.omega, dtype=complex)
        if self.omega.ndim != 2 or self.omega.shape[1] != self.grid.n_y:
            raise ValueError(f"bad state shape {self.omega.shape}")
        if self.omega.shape[0] > self.grid.dealias_cut + 1:
            raise ValueError("state carries bands above the dealiasing cut")
        self.omega[0] = self.omega[0].real

    @classmethod
    def zeros(cls, grid: Grid) -> "NonlinearState":
        return cls(np.zeros((grid.dealias_cut + 1, grid.n_y), dtype=complex), grid)

    @property
    def psi(self) -> np.ndarray:
        return inverse_laplacian_stack(self.omega, self.grid)

    @property
    def velocity(self) -> tuple[np.ndarray, np.ndarray]:
        return velocity_from_stream(self.psi, self.grid)

    def copy(self) -> "NonlinearState":
        return NonlinearState(self.omega.copy(), self.grid, self.t)


# -- the quadratic term ---------------------------------------------------


def _to_physical(stack: np.ndarray, grid: Grid) -> np.ndarray:
    """x collocation values, layout ``(y, x)``."""
    return scipy.fft.irfft(np.asarray(stack).T, n=grid.n_x, axis=-1, norm="forward")


def _quadratic_parts(omega: np.ndarray, grid: Grid):
    """``div(u w)`` per band, the band-0 part of ``u2 w`` and the peak of ``|u1|``, ``|u2|``."""
    nb = omega.shape[0]
    ks = np.arange(nb)[:, None]
    psi = inverse_laplacian_stack(omega, grid)
    stack = np.empty((3, grid.n_y, nb), dtype=complex)
    stack[0] = omega.T
    stack[1] = -_dy(grid, psi).T
    stack[2] = (1j * ks * psi).T
    # x collocation values of w, u1, u2 in one transform; layout (field, y, x)
    phys = scipy.fft.irfft(stack, n=grid.n_x, axis=-1, norm="forward")
    flux = scipy.fft.rfft(phys[1:] * phys[0], axis=-1, norm="forward")[:, :, :nb]
    out = 1j * ks * flux[0].T + _dy(grid, flux[1].T)
    out[0] = out[0].real
    speeds = (float(np.max(np.abs(phys[1]))), float(np.max(np.abs(phys[2]))))
    return out, flux[1][:, 0].real, speeds


def _quadratic(omega: np.ndarray, grid: Grid):
    """Return ``div(u w)`` per band and the band-0 part of ``u2 w``."""
    out, f2_0, _ = _quadratic_parts(omega, grid)
    return out, f2_0


def nonlinear_term(state: NonlinearState) -> np.ndarray:
    """Band coefficients of ``u . grad w`` (divergence form, dealiased)."""
    return _quadratic(state.omega, state.grid)[0]


def convolution_nonlinear_term(omega: np.ndarray, grid: Grid) -> np.ndarray:
    """Direct sum over all band pairs; an O(K^2) reference for small grids."""
    nb = omega.shape[0]
    psi = inverse_laplacian_stack(omega, grid)
    u1, u2 = velocity_from_stream(psi, grid)

    def coef(f, p):
        return f[p] if p >= 0 else np.conj(f[-p])

    out = np.zeros_like(omega, dtype=complex)
    for k in range(nb):
        s1 = np.zeros(grid.n_y, dtype=complex)
        s2 = np.zeros(grid.n_y, dtype=complex)
        for p in range(-nb + 1, nb):
            q = k - p
            if abs(q) < nb:
                s1 += coef(u1, p) * coef(omega, q)
                s2 += coef(u2, p) * coef(omega, q)
        out[k] = 1j * k * s1 + grid.d1 @ s2
    return out


def shear_flux_identity(state: NonlinearState) -> tuple[np.ndarray, np.ndarray]:
    """Band 0 of the nonlinear term and ``-d_yy P0(u1 u2)`` from the nonzero bands."""
    grid = state.grid
    u1, u2 = state.velocity
    p0_u1u2 = 2.0 * np.sum((u1[1:] * np.conj(u2[1:])).real, axis=0)
    return nonlinear_term(state)[0].real, -(grid.d2 @ p0_u1u2)


# -- stepping -------------------------------------------------------------


def _cfl_limit(speeds: tuple[float, float], grid: Grid, cfl: float) -> float:
    v1, v2 = speeds
    limit = math.inf
    if v1 > 0:
        limit = min(limit, cfl * (2.0 * np.pi / grid.n_x) / v1)
    if v2 > 0:
        limit = min(limit, cfl * grid.h / v2)
    return limit


def advective_dt_limit(omega: np.ndarray, grid: Grid, cfl: float = 0.4) -> float:
    """CFL step bound from the perturbation velocity; the base shear is implicit."""
    u1, u2 = velocity_from_stream(inverse_laplacian_stack(omega, grid), grid)
    speeds = (float(np.max(np.abs(_to_physical(u1, grid)))), float(np.max(np.abs(_to_physical(u2, grid)))))
    return _cfl_limit(speeds, grid, cfl)


@dataclass(frozen=True)
class DtPolicy:
    """Step-size rule.

    ``kind="fixed"`` uses ``dt`` throughout. ``kind="adaptive"`` picks, every
    step, the largest ``dt / 2**m`` that keeps the energy-weighted shear phase
    ``k <y^2> dt`` below ``theta`` and satisfies the advective CFL condition of
    the perturbation velocity with number ``cfl``.

    The phase limit is dropped once the nonzero bands have fallen below
    ``resolve_floor`` times their size at the start of the run: from then on
    they cannot move any reported quantity at double precision.
    """

    kind: str = "adaptive"
    dt: float = 1.0
    theta: float = 0.1
    cfl: float = 0.4
    max_halvings: int = 16
    resolve_floor: float = 1e-14

    def __post_init__(self):
        if self.kind not in ("fixed", "adaptive"):
            raise ConfigurationError(f"unknown dt policy {self.kind!r}")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")


@dataclass
class RunState:
    """Everything needed to resume a run bit for bit."""

    state: NonlinearState
    n_steps: int = 0
    int_grad_tilde: float = 0.0
    int_d2: float = 0.0
    worst_energy_residual: float = 0.0
    worst_l2_increase: float = 0.0
    reference_mass: float = math.nan  # nonzero-band energy when the run started


class NonlinearSolver:
    """IMEX stepper for the full perturbation equation."""

    def __init__(
        self,
        grid: Grid,
        nu: float,
        coeffs: HypocoCoefficients | None = None,
        nonlinear: bool = True,
        policy: DtPolicy | None = None,
    ):
        if not nu > 0:
            raise ConfigurationError("nu must be positive")
        self.grid, self.nu = grid, nu
        self.coeffs = coeffs or default_coefficients()
        self.nonlinear = nonlinear
        self.policy = policy or DtPolicy()
        self.n_bands = grid.dealias_cut + 1
        self.systems = [LinearModeSystem(k, nu, grid) for k in range(self.n_bands)]
        self.weights = _band_weights(self.n_bands, grid)
        self._props: dict[float, BandStack] = {}

    def propagators(self, dt: float) -> BandStack:
        bands = self._props.get(dt)
        if bands is None:
            props = [CrankNicolson(s, dt, check_bound=False) for s in self.systems]
            width = max(p.width for p in props)
            transport = [s.has_transport for s in self.systems]
            bands = BandStack([p.lhs for p in props], transport, self.nu, dt, self.grid, width)
            self._props[dt] = bands
        return bands

    def quadratic(self, omega: np.ndarray) -> np.ndarray:
        if not self.nonlinear:
            return np.zeros_like(omega)
        return _quadratic_parts(omega, self.grid)[0]

    def step(self, omega: np.ndarray, dt: float, n0: np.ndarray | None = None) -> np.ndarray:
        """One step from ``omega``; ``n0`` may carry the already evaluated quadratic term."""
        bands = self.propagators(dt)
        rhs = bands.apply_rhs(omega)
        if not self.nonlinear:
            new = bands.solve(rhs)
        else:
            if n0 is None:
                n0 = self.quadratic(omega)
            pred = bands.solve(rhs - dt * bands.apply_left(n0))
            pred[0] = pred[0].real
            nbar = 0.5 * (n0 + self.quadratic(pred))
            new = bands.solve(rhs - dt * bands.apply_left(nbar))
        new[0] = new[0].real
        new[np.abs(new) < FLUSH_LEVEL] = 0.0
        return new

    # -- adaptive step selection
    def choose_dt(
        self, omega: np.ndarray, speeds: tuple[float, float] | None = None, reference_mass: float = math.nan
    ) -> float:
        pol = self.policy
        if pol.kind == "fixed":
            return pol.dt
        limit = pol.dt
        dens = np.abs(omega[1:]) ** 2
        mass = dens.sum(axis=1)
        resolved = not mass.sum() <= pol.resolve_floor**2 * reference_mass
        if mass.sum() > 0 and resolved:
            ks = np.arange(1, self.n_bands)
            freq = np.sum(ks * (dens @ self.grid.y**2)) / mass.sum()
            if freq > 0:
                limit = min(limit, pol.theta / freq)
        if self.nonlinear:
            if speeds is None:
                limit = min(limit, advective_dt_limit(omega, self.grid, pol.cfl))
            else:
                limit = min(limit, _cfl_limit(speeds, self.grid, pol.cfl))
        dt = pol.dt
        for _ in range(pol.max_halvings):
            if dt <= limit:
                return dt
            dt *= 0.5
        raise ConfigurationError(f"step size fell below {dt:g}; the run is under-resolved")

    # -- quadratic quantities summed over bands
    def energy(self, omega: np.ndarray) -> float:
        return float(self.grid.h * np.sum(self.weights * np.sum(np.abs(omega) ** 2, axis=1)))

    def _lap(self, omega: np.ndarray) -> np.ndarray:
        ks = np.arange(omega.shape[0], dtype=float)
        return stencil_apply(grid_stencils(self.grid)[1], np.ascontiguousarray(omega, dtype=complex), ks**2)

    def _grad_bands(self, omega: np.ndarray, lap: np.ndarray) -> np.ndarray:
        return -self.grid.h * self.weights * np.sum((lap * np.conj(omega)).real, axis=1)

    def grad_sq(self, omega: np.ndarray, nonzero_only: bool = False) -> float:
        per_band = self._grad_bands(omega, self._lap(omega))
        return float(per_band[1:].sum() if nonzero_only else per_band.sum())

    def lap_sq(self, omega: np.ndarray) -> float:
        return float(self.grid.h * np.sum(self.weights * np.sum(np.abs(self._lap(omega)) ** 2, axis=1)))

    def advance(self, run: RunState, n: int = 1) -> RunState:
        """Take ``n`` steps, updating the running integrals and step monitors."""
        omega = run.state.omega
        lap = self._lap(omega)
        h, wts = self.grid.h, self.weights
        g_tilde = float(self._grad_bands(omega, lap)[1:].sum())
        d2 = float(h * np.sum(wts * np.sum(np.abs(lap) ** 2, axis=1)))
        e0 = self.energy(omega)
        if math.isnan(run.reference_mass):
            run.reference_mass = float(np.sum(np.abs(omega[1:]) ** 2))
        for _ in range(n):
            if self.nonlinear:
                n0, _, speeds = _quadratic_parts(omega, self.grid)
            else:
                n0, speeds = None, None
            dt = self.choose_dt(omega, speeds, run.reference_mass)
            new = self.step(omega, dt, n0)
            if not np.all(np.isfinite(new)):
                raise SimulationError(f"non-finite state at t={run.state.t + dt:g}", run.n_steps)
            lap_new = self._lap(new)
            e1 = self.energy(new)
            # the discrete Laplacian is linear, so the midpoint needs no extra stencil pass
            diss = self.nu * float(self._grad_bands(0.5 * (omega + new), 0.5 * (lap + lap_new)).sum())
            if diss > 0:
                res = abs(0.5 * (e1 - e0) / dt + diss) / diss
                run.worst_energy_residual = max(run.worst_energy_residual, res)
            if e0 > 0:
                run.worst_l2_increase = max(run.worst_l2_increase, (e1 - e0) / e0)
            g_new = float(self._grad_bands(new, lap_new)[1:].sum())
            d2_new = float(h * np.sum(wts * np.sum(np.abs(lap_new) ** 2, axis=1)))
            run.int_grad_tilde += 0.5 * dt * (g_tilde + g_new)
            run.int_d2 += 0.5 * dt * (d2 + d2_new)
            g_tilde, d2, e0, lap = g_new, d2_new, e1, lap_new
            omega = new
            run.n_steps += 1
            if self.policy.kind == "fixed":
                t = run.n_steps * self.policy.dt
            else:
                t = run.state.t + dt
            run.state = NonlinearState(omega, self.grid, t)
        return run


def step_nonlinear(state: NonlinearState, dt: float, nu: float, nonlinear: bool = True) -> NonlinearState:
    """One IMEX step of size ``dt`` (convenience wrapper)."""
    solver = _solver_cache(state.grid, nu, nonlinear)
    if nonlinear and dt > advective_dt_limit(state.omega, state.grid):
        raise ConfigurationError(f"dt={dt:g} violates the advective CFL bound")
    return NonlinearState(solver.step(state.omega, dt), state.grid, state.t + dt)


_SOLVERS: dict = {}


def _solver_cache(grid: Grid, nu: float, nonlinear: bool) -> NonlinearSolver:
    key = (grid, nu, nonlinear)
    if key not in _SOLVERS:
        _SOLVERS[key] = NonlinearSolver(grid, nu, nonlinear=nonlinear)
    return _SOLVERS[key]


# -- diagnostics ----------------------------------------------------------


@dataclass(frozen=True)
class ShearRecord:
    """Norms of the x-averaged fields and the nonlinear fluxes into them."""

    omega_s: float
    y_omega_s: float
    u_s: float
    y_u_s: float
    psi_s: float
    u: float
    y_dy_u_s: float
    flux_vorticity: float
    flux_velocity: float
    flux_stream: float


def shear_diagnostics(state: NonlinearState) -> ShearRecord:
    grid = state.grid
    h, y = grid.h, grid.y
    w_s = state.omega[0].real
    psi = state.psi
    psi_s = psi[0].real
    u1, u2 = velocity_from_stream(psi, grid)
    u_s = u1[0].real
    weights = _band_weights(state.omega.shape[0], grid)

    def n2(f):
        return 2.0 * np.pi * h * float(np.sum(f**2))

    if np.any(state.omega[1:]):
        nl, f2_0 = _quadratic(state.omega, grid)
        p0_u1u2 = 2.0 * np.sum((u1[1:] * np.conj(u2[1:])).real, axis=0)
        fluxes = (
            2.0 * np.pi * h * float(np.sum(nl[0].real * y**2 * w_s)),
            2.0 * np.pi * h * float(np.sum(f2_0 * y**2 * u_s)),
            2.0 * np.pi * h * float(np.sum(p0_u1u2 * psi_s)),
        )
    else:
        fluxes = (0.0, 0.0, 0.0)
    u_sq = h * float(np.sum(weights * np.sum(np.abs(u1) ** 2 + np.abs(u2) ** 2, axis=1)))
    return ShearRecord(
        omega_s=math.sqrt(n2(w_s)),
        y_omega_s=math.sqrt(n2(y * w_s)),
        u_s=math.sqrt(n2(u_s)),
        y_u_s=math.sqrt(n2(y * u_s)),
        psi_s=math.sqrt(n2(psi_s)),
        u=math.sqrt(u_sq),
        y_dy_u_s=math.sqrt(n2(y * (grid.d1 @ u_s))),
        flux_vorticity=fluxes[0],
        flux_velocity=fluxes[1],
        flux_stream=fluxes[2],
    )


def spectrum_diagnostics(omega: np.ndarray, grid: Grid, nu: float, c: HypocoCoefficients) -> dict:
    """Band sums of the linear-run diagnostics; ``phi`` and ``q`` sum over k >= 1."""
    nb = omega.shape[0]
    h, y = grid.h, grid.y
    w = _band_weights(nb, grid) * h
    ks = np.arange(nb)
    psi = inverse_laplacian_stack(omega, grid)
    lap = _dy(grid, omega, second=True) - (ks**2)[:, None] * omega

    def ip(f, g):
        return w * np.sum((f * np.conj(g)).real, axis=1)

    l2 = ip(omega, omega)
    grad = -ip(lap, omega)
    cross = 0.5 * ip(lap, -1j * ks[:, None] * y**2 * omega)
    yom = ip(y * omega, y * omega)
    gpsi = -ip(psi, omega)
    nz = ks[1:]
    alpha = c.alpha0 * math.sqrt(nu) / np.sqrt(nz)
    beta = c.beta0 / nz
    gamma = c.gamma0 / (math.sqrt(nu) * nz**1.5)
    phi = 0.5 * (
        l2[1:] + alpha * grad[1:] + 4 * beta * cross[1:] + gamma * (nz**2 * yom[1:] + 2 * nz**2 * gpsi[1:])
    )
    q = 0.5 * l2[1:] + 0.25 * c.gamma0 * (yom[1:] + 2 * gpsi[1:])
    xn = l2 + yom
    return dict(
        l2_sq=float(l2.sum()),
        grad_sq=float(grad.sum()),
        cross=float(cross.sum()),
        yomega_x_sq=float(np.sum(ks**2 * yom)),
        grad_dxpsi_sq=float(np.sum(ks**2 * gpsi)),
        phi=float(phi.sum()),
        q=float(q.sum()),
        x_norm_sq=float(xn.sum()),
        guard=boundary_flag(omega),
        nonzero_xnorm=math.sqrt(float(xn[1:].sum())),
        p0_xnorm=math.sqrt(float(xn[0])),
    )


def amplitude(state: NonlinearState) -> float:
    """``||w||_X + ||y P0 u1||``, the quantity bounded by the threshold law."""
    grid = state.grid
    psi_s = inverse_laplacian_stack(state.omega[:1], grid)[0].real
    u_s = -(grid.d1 @ psi_s)
    y_us = math.sqrt(2.0 * np.pi * grid.h * float(np.sum((grid.y * u_s) ** 2)))
    d = spectrum_diagnostics(state.omega, grid, 1.0, default_coefficients())
    return math.sqrt(d["x_norm_sq"]) + y_us


@dataclass(frozen=True)
class NonlinearSample:
    t: float
    diag: dict
    shear: ShearRecord | None
    xt_ratio: float
    int_grad_tilde: float
    int_d2: float
    n_steps: int

    CSV_COLUMNS = (
        "t", "l2_sq", "grad_sq", "cross", "yomega_x_sq", "grad_dxpsi_sq",
        "phi", "q", "x_norm_sq", "guard", "xt_ratio", "p0_xnorm",
    )  # fmt: skip

    def csv_row(self) -> list:
        row = [self.t] + [self.diag[c] for c in self.CSV_COLUMNS[1:10]]
        return row + [self.xt_ratio, self.diag["p0_xnorm"]]


@dataclass
class NonlinearTrajectory:
    nu: float
    grid: Grid
    samples: list[NonlinearSample]
    initial: NonlinearState
    final: NonlinearState
    run: RunState
    states: list[NonlinearState] | None = None
    nonlinear: bool = True

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    def series(self, key: str) -> np.ndarray:
        return np.array([s.diag[key] for s in self.samples])


def _sample(solver: NonlinearSolver, run: RunState, x0_tilde: float, with_shear: bool) -> NonlinearSample:
    st = run.state
    d = spectrum_diagnostics(st.omega, st.grid, solver.nu, solver.coeffs)
    lam = rate_formula_nu(solver.nu) if solver.nu <= 1 else math.sqrt(solver.nu)
    if x0_tilde > 0:
        xt = math.exp(solver.coeffs.epsilon0 * lam * st.t) * d["nonzero_xnorm"] / x0_tilde
    else:
        xt = 0.0
    return NonlinearSample(
        t=st.t,
        diag=d,
        shear=shear_diagnostics(st) if with_shear else None,
        xt_ratio=xt,
        int_grad_tilde=run.int_grad_tilde,
        int_d2=run.int_d2,
        n_steps=run.n_steps,
    )


def evolve_nonlinear(
    solver: NonlinearSolver,
    run: RunState | NonlinearState,
    T: float,
    sample_interval: float | None = None,
    with_shear: bool = True,
    keep_states: bool = False,
    initial: NonlinearState | None = None,
) -> NonlinearTrajectory:
    """Advance until ``t >= T``; sample whenever a multiple of ``sample_interval`` is crossed.

    Steps are never shortened to land on ``T``, so a run split at any
    checkpoint and resumed reproduces the unsplit run exactly.
    """
    if isinstance(run, NonlinearState):
        run = RunState(run.copy())
    initial = initial or run.state.copy()
    d0 = spectrum_diagnostics(initial.omega, initial.grid, solver.nu, solver.coeffs)
    x0_tilde = d0["nonzero_xnorm"]
    interval = sample_interval or max(T - run.state.t, 1e-300) / 1000.0
    samples = [_sample(solver, run, x0_tilde, with_shear)]
    states = [run.state.copy()] if keep_states else None
    next_sample = (math.floor(run.state.t / interval + 1e-9) + 1) * interval
    fixed = solver.policy.kind == "fixed"
    end_steps = int(math.ceil(T / solver.policy.dt - 1e-9)) if fixed else None
    while (run.n_steps < end_steps) if fixed else (run.state.t < T * (1 - 1e-12)):
        solver.advance(run)
        done = (run.n_steps >= end_steps) if fixed else (run.state.t >= T * (1 - 1e-12))
        if run.state.t >= next_sample - 1e-9 * interval or done:
            samples.append(_sample(solver, run, x0_tilde, with_shear))
            if keep_states:
                states.append(run.state.copy())
            next_sample = (math.floor(run.state.t / interval + 1e-9) + 1) * interval
    return NonlinearTrajectory(
        nu=solver.nu,
        grid=solver.grid,
        samples=samples,
        initial=initial,
        final=run.state,
        run=run,
        states=states,
        nonlinear=solver.nonlinear,
    )


# -- initial data -------------------------------------------------------


def _envelope_profile(rng, grid: Grid, complex_valued: bool, n_waves: int = 6, kmax: float = 3.0):
    kappa = np.linspace(0.0, kmax, n_waves + 1)
    amp = rng.standard_normal((2, n_waves + 1))
    if complex_valued:
        amp = amp + 1j * rng.standard_normal((2, n_waves + 1))
    y = grid.y[:, None]
    prof = (amp[0] * np.cos(kappa * y) + amp[1] * np.sin(kappa * y)).sum(axis=1)
    return prof * np.exp(-(grid.y**2) / 2.0)


def threshold_initial_data(
    grid: Grid,
    amplitude_target: float,
    seed: int,
    bands=(1, 2, 3, 4),
    shear_fraction: float = 0.2,
) -> NonlinearState:
    """Seeded random data on ``bands`` plus a shear part, scaled to an exact amplitude.

    ``shear_fraction`` is the share of the squared X norm carried by band 0.
    The shear part is built from a decaying stream function, so its velocity
    is localized and the weighted velocity norm is finite.
    """
    if not 0.0 <= shear_fraction < 1.0:
        raise ConfigurationError("shear_fraction must lie in [0, 1)")
    if any(k < 1 or k > grid.dealias_cut for k in bands):
        raise ConfigurationError(f"bands must lie in 1..{grid.dealias_cut}")
    rng = np.random.default_rng(seed)
    omega = np.zeros((grid.dealias_cut + 1, grid.n_y), dtype=complex)
    for k in bands:
        omega[k] = _envelope_profile(rng, grid, True)
    psi_s = _envelope_profile(rng, grid, False)
    omega_s = grid.d2 @ psi_s
    state = NonlinearState(omega, grid)
    c = default_coefficients()
    if shear_fraction > 0:
        xt = spectrum_diagnostics(omega, grid, 1.0, c)["nonzero_xnorm"] if bands else 1.0
        xs = spectrum_diagnostics(omega_s[None, :].astype(complex), grid, 1.0, c)["p0_xnorm"]
        omega[0] = omega_s * (math.sqrt(shear_fraction / (1.0 - shear_fraction)) * xt / xs)
        state = NonlinearState(omega, grid)
    a = amplitude(state)
    if a == 0:
        return state
    return NonlinearState(state.omega * (amplitude_target / a), grid)


# -- monitors -------------------------------------------------------------


@dataclass
class BootstrapReport:
    times: np.ndarray
    xt_ratio: np.ndarray
    bound_ratio: np.ndarray
    crosses_2c0: bool
    crosses_4c0: bool
    verdict: str

    @property
    def passed(self) -> bool:
        return self.verdict in ("pass", "vacuous pass")

    @property
    def max_xt_ratio(self) -> float:
        return float(self.xt_ratio.max()) if self.xt_ratio.size else 0.0


def bootstrap_monitor(traj: NonlinearTrajectory, c: HypocoCoefficients | None = None) -> BootstrapReport:
    """Weighted-in-time norm ratios and the decay verdict for the nonzero bands."""
    c = c or default_coefficients()
    c0, kap = c0_constant(c), kappa0_constant(c)
    lam = rate_formula_nu(traj.nu)
    t = traj.times
    x = traj.series("nonzero_xnorm")
    if x[0] == 0.0:
        z = np.zeros_like(t)
        return BootstrapReport(t, z, z, False, False, "vacuous pass")
    xt = np.exp(c.epsilon0 * lam * t) * x / x[0]
    bound = x / (2.0 * c0 * np.exp(-kap * lam * t) * x[0])
    verdict = "pass" if np.all(bound <= 1.0) else "fail"
    return BootstrapReport(t, xt, bound, bool(np.any(xt > 2 * c0)), bool(np.any(xt > 4 * c0)), verdict)


@dataclass
class MonitoredQuantity:
    name: str
    values: np.ndarray
    scale: float
    fitted_constant: float
    bound_constant: float
    flagged: int


@dataclass
class AprioriReport:
    quantities: dict[str, MonitoredQuantity]
    factor: float

    @property
    def flagged(self) -> bool:
        return any(q.flagged for q in self.quantities.values())


def apriori_monitor(traj: NonlinearTrajectory, mu: float = 0.05, factor: float = 10.0) -> AprioriReport:
    """Integrated and weighted shear quantities against their threshold-regime scales.

    ``fitted_constant`` is the largest ratio of a quantity to its scale.
    ``bound_constant`` is the smallest constant that makes the corresponding
    a priori bound hold with the initial-data terms taken from the run.
    """
    nu = traj.nu
    lam = rate_formula_nu(nu)
    s0 = traj.samples[0]
    x_in = math.sqrt(s0.diag["x_norm_sq"])
    x_tilde = s0.diag["nonzero_xnorm"]
    l2_in = math.sqrt(s0.diag["l2_sq"])
    grad_in = s0.diag["grad_sq"]
    shear = [s.shear for s in traj.samples]
    have_shear = all(s is not None for s in shear)

    int_grad = np.array([s.int_grad_tilde for s in traj.samples])
    int_d2 = np.array([s.int_d2 for s in traj.samples])
    out = {}

    def add(name, values, scale, excess, denom):
        values = np.asarray(values, float)
        ratio = values / scale if scale > 0 else np.zeros_like(values)
        with np.errstate(invalid="ignore", divide="ignore"):
            fit_b = np.where(denom > 0, np.maximum(excess, 0.0) / np.where(denom > 0, denom, 1.0), 0.0)
        out[name] = MonitoredQuantity(
            name,
            values,
            scale,
            float(ratio.max()) if ratio.size else 0.0,
            float(np.max(fit_b)) if np.size(fit_b) else 0.0,
            int(np.sum(ratio > factor)),
        )

    add(
        "int_grad_tilde",
        int_grad,
        x_tilde**2 / nu,
        int_grad - l2_in**2 / nu,
        np.full_like(int_grad, l2_in**2 / nu**2 / lam * x_tilde**2),
    )
    add(
        "int_d2",
        int_d2,
        nu ** (-1.0 + 2.0 * mu),
        int_d2 - grad_in / nu,
        np.full_like(int_d2, x_tilde**2 / (nu**2 * lam) + 4.0 * l2_in**4 / nu**3),
    )
    if have_shear:
        yus_psi = np.array([s.y_u_s + s.psi_s for s in shear])
        add(
            "yus_plus_psis",
            yus_psi,
            nu ** (0.75 + 2.0 * mu),
            yus_psi - yus_psi[0],
            np.full_like(yus_psi, nu**-0.25 * lam**-0.75 * x_in**2),
        )
        yws_u = np.array([s.y_omega_s + s.u for s in shear])
        add(
            "yws_plus_u",
            yws_u,
            nu ** (0.75 + 2.0 * mu),
            yws_u - yws_u[0],
            lam**-0.5 * x_in * np.sqrt(int_grad),
        )
    return AprioriReport(out, factor)


# -- threshold runs and sweeps -------------------------------------------


@dataclass(frozen=True)
class ThresholdConfig:
    """One threshold experiment: amplitude ``multiplier * C1 * nu^(3/4 + 2 mu)``."""

    nu: float = 1e-3
    mu: float = 0.05
    C1: float = 1.0
    multiplier: float = 1.0
    seed: int = 0
    horizon: float = 2.0  # units of 1 / (kappa0 lambda_nu)
    shear_fraction: float = 0.2
    bands: tuple = (1, 2, 3, 4)
    n_x: int = 128
    L: float = 10.0
    n_y: int = 512
    fd_order: int = 8
    dt: float = 2.0
    theta: float = 0.1
    n_samples: int = 1000
    budget: float = 1e10
    nonlinear: bool = True

    @property
    def grid(self) -> Grid:
        return Grid(self.n_x, self.L, self.n_y, self.fd_order)

    @property
    def amplitude(self) -> float:
        return self.multiplier * self.C1 * self.nu ** (0.75 + 2.0 * self.mu)

    @property
    def compliant(self) -> bool:
        return self.multiplier <= 1.0

    @property
    def T(self) -> float:
        return self.horizon / (kappa0_constant() * rate_formula_nu(self.nu))

    @property
    def cost(self) -> float:
        return self.n_x * self.n_y * math.ceil(self.T / self.dt)


@dataclass
class SweepCell:
    nu: float
    multiplier: float
    compliant: bool
    verdict: str
    fitted_rate: float = math.nan
    rate_bound: float = math.nan
    max_xt_ratio: float = math.nan
    p0_ratio: float = math.nan
    runtime: float = 0.0
    note: str = ""

    CSV_COLUMNS = ("nu", "multiplier", "compliant", "verdict", "fitted_rate", "rate_bound", "max_xt_ratio", "p0_ratio")

    def csv_row(self) -> list:
        return [getattr(self, c) for c in self.CSV_COLUMNS]


@dataclass
class SweepReport:
    cells: list[SweepCell] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """No threshold-compliant cell failed; skipped cells do not count."""
        return not any(c.verdict == "fail" for c in self.cells if c.compliant)

    def matrix(self) -> dict:
        return {(c.nu, c.multiplier): c.verdict for c in self.cells}


def _p_neq_rate(traj: NonlinearTrajectory) -> float:
    t, x = traj.times, traj.series("nonzero_xnorm")
    keep = x > 1e-12 * x[0] if x[0] > 0 else np.zeros_like(x, bool)
    if keep.sum() < 4:
        keep = x > 0
    if keep.sum() < 3:
        return math.nan
    return fit_decay_rate(t[keep], x[keep], 0.6)[0]


def run_threshold(cfg: ThresholdConfig, keep_states: bool = False) -> tuple[NonlinearTrajectory, BootstrapReport]:
    grid = cfg.grid
    state = threshold_initial_data(grid, cfg.amplitude, cfg.seed, cfg.bands, cfg.shear_fraction)
    policy = DtPolicy("adaptive", dt=cfg.dt, theta=cfg.theta)
    solver = NonlinearSolver(grid, cfg.nu, nonlinear=cfg.nonlinear, policy=policy)
    traj = evolve_nonlinear(solver, state, cfg.T, cfg.T / cfg.n_samples, keep_states=keep_states)
    return traj, bootstrap_monitor(traj)


def _run_cell(cfg: ThresholdConfig) -> SweepCell:
    start = time.perf_counter()
    cell = SweepCell(cfg.nu, cfg.multiplier, cfg.compliant, "skipped")
    if cfg.cost > cfg.budget:
        cell.note = f"cost {cfg.cost:.3g} exceeds budget {cfg.budget:.3g}"
        return cell
    traj, boot = run_threshold(cfg)
    x_in = math.sqrt(traj.samples[0].diag["x_norm_sq"])
    p0 = traj.series("p0_xnorm")
    cell.verdict = "pass" if boot.passed else "fail"
    cell.fitted_rate = _p_neq_rate(traj)
    cell.rate_bound = kappa0_constant() * rate_formula_nu(cfg.nu)
    cell.max_xt_ratio = boot.max_xt_ratio
    cell.p0_ratio = float(p0.max() / x_in) if x_in > 0 else 0.0
    cell.runtime = time.perf_counter() - start
    return cell


def worker_count(requested: int | None = None) -> int:
    env = os.environ.get("POISEUILLE_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigurationError(f"POISEUILLE_WORKERS must be an integer, got {env!r}") from exc
    elif requested:
        n = requested
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigurationError("worker count must be >= 1")
    return n


def run_threshold_sweep(cells, base: ThresholdConfig | None = None, workers: int | None = None) -> SweepReport:
    """Run every ``(nu, multiplier)`` cell; results keep the input order."""
    base = base or ThresholdConfig()
    cfgs = [replace(base, nu=nu, multiplier=m) for nu, m in cells]
    n = min(worker_count(workers), max(len(cfgs), 1))
    if n == 1 or len(cfgs) <= 1:
        results = [_run_cell(c) for c in cfgs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_run_cell, cfgs))
    return SweepReport(results)


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(path, solver: NonlinearSolver, run: RunState, seed: int | None = None) -> None:
    g = solver.grid
    np.savez(
        path,
        omega=run.state.omega,
        t=run.state.t,
        n_steps=run.n_steps,
        int_grad_tilde=run.int_grad_tilde,
        int_d2=run.int_d2,
        worst_energy_residual=run.worst_energy_residual,
        worst_l2_increase=run.worst_l2_increase,
        reference_mass=run.reference_mass,
        grid=np.array([g.n_x, g.L, g.n_y, g.fd_order], dtype=float),
        nu=solver.nu,
        nonlinear=solver.nonlinear,
        policy=np.array([solver.policy.dt, solver.policy.theta, solver.policy.cfl, solver.policy.resolve_floor]),
        policy_kind=solver.policy.kind,
        seed=-1 if seed is None else seed,
    )


def load_checkpoint(path) -> tuple[NonlinearSolver, RunState, int | None]:
    with np.load(path) as z:
        n_x, L, n_y, order = z["grid"]
        grid = Grid(int(n_x), float(L), int(n_y), int(order))
        dt, theta, cfl, floor = (float(v) for v in z["policy"])
        policy = DtPolicy(str(z["policy_kind"]), dt=dt, theta=theta, cfl=cfl, resolve_floor=floor)
        solver = NonlinearSolver(grid, float(z["nu"]), nonlinear=bool(z["nonlinear"]), policy=policy)
        run = RunState(
            NonlinearState(z["omega"], grid, float(z["t"])),
            n_steps=int(z["n_steps"]),
            int_grad_tilde=float(z["int_grad_tilde"]),
            int_d2=float(z["int_d2"]),
            worst_energy_residual=float(z["worst_energy_residual"]),
            worst_l2_increase=float(z["worst_l2_increase"]),
            reference_mass=float(z["reference_mass"]),
        )
        seed = int(z["seed"])
    return solver, run, None if seed < 0 else seed
