"""Coefficient ledger, the functionals Phi_k and Q_k, energy balances and rate fits.

All quadratic quantities are real L^2 pairings on the strip, evaluated with
the same nodal quadrature. Terms that involve two y-derivatives of a weighted
field are written in their summation-by-parts form, so that the discrete
balances for the L^2, H^1, weighted and stream-function energies close up to
the time-differencing error only.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .biot_savart import helmholtz_solver
from .spectral import ModeField, boundary_flag

__all__ = [
    "BalanceTable",
    "ConstraintReport",
    "ConstraintResult",
    "DecayReport",
    "DiagnosticsRecord",
    "HypocoCoefficients",
    "balance_residuals",
    "c0_constant",
    "check_coefficients",
    "check_phi_inequality",
    "check_q_inequality",
    "compute_phi",
    "compute_q",
    "default_coefficients",
    "fit_decay_rate",
    "kappa0_constant",
    "mode_diagnostics",
    "rate_formula",
    "rate_formula_nu",
    "sandwich_bounds",
    "transient_time",
]

CONSTRAINT_RTOL = 1e-12


@dataclass(frozen=True)
class HypocoCoefficients:
    """Base coefficients of the hypocoercive functional.

    ``scaled(nu, k)`` gives the per-band weights
    ``alpha = alpha0 sqrt(nu/k)``, ``beta = beta0/k`` and
    ``gamma = gamma0 / (sqrt(nu) k^{3/2})``.
    """

    delta0: float
    alpha0: float
    beta0: float
    gamma0: float
    epsilon0: float

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive, got {getattr(self, f.name)}")

    @classmethod
    def from_delta(cls, delta0: float) -> "HypocoCoefficients":
        return cls(
            delta0=delta0,
            alpha0=4.0 * delta0**3,
            beta0=delta0**2 / 4.0,
            gamma0=delta0 / 4.0,
            epsilon0=delta0 / 4.0,
        )

    def scaled(self, nu: float, k: int) -> tuple[float, float, float]:
        if k < 1:
            raise ValueError("the functional is defined for k >= 1")
        return (
            self.alpha0 * math.sqrt(nu) / math.sqrt(k),
            self.beta0 / k,
            self.gamma0 / (math.sqrt(nu) * k**1.5),
        )

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ConstraintResult:
    name: str
    lhs: float
    rhs: float
    relation: str
    passed: bool

    @property
    def slack(self) -> float:
        """Signed margin; nonnegative means satisfied."""
        return self.rhs - self.lhs if self.relation == "<=" else self.lhs - self.rhs


@dataclass(frozen=True)
class ConstraintReport:
    results: tuple[ConstraintResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failing(self) -> list[str]:
        return [r.name for r in self.results if not r.passed]

    def __getitem__(self, name: str) -> ConstraintResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def as_rows(self) -> list[dict]:
        return [
            dict(name=r.name, lhs=r.lhs, relation=r.relation, rhs=r.rhs, slack=r.slack, passed=r.passed)
            for r in self.results
        ]


def default_coefficients() -> HypocoCoefficients:
    """The admissible choice ``delta0^4 = 1/512`` and its derived values."""
    c = HypocoCoefficients.from_delta(512.0 ** -0.25)
    report = check_coefficients(c)
    if not report.passed:  # pragma: no cover - fixed arithmetic
        raise AssertionError(f"default coefficients violate {report.failing}")
    return c


def _compare(name: str, lhs: float, rel: str, rhs: float, rtol: float) -> ConstraintResult:
    tol = rtol * max(abs(lhs), abs(rhs))
    ok = lhs <= rhs + tol if rel == "<=" else lhs >= rhs - tol
    return ConstraintResult(name, float(lhs), float(rhs), rel, bool(ok))


def check_coefficients(c: HypocoCoefficients, rtol: float = CONSTRAINT_RTOL) -> ConstraintReport:
    """Evaluate every admissibility condition on ``c``.

    Two of the conditions hold with equality for the default choice, so the
    comparison allows a relative rounding margin ``rtol``.
    """
    a, b, g = c.alpha0, c.beta0, c.gamma0
    return ConstraintReport(
        (
            _compare("cross_term", b**2 / (a * g), "<=", 1.0 / 16.0, rtol),
            _compare("beta_vs_alpha", b, ">=", 4.0 * a**2, rtol),
            _compare("alpha_bound", 2.0 / math.sqrt(b), ">=", 3.0 * a, rtol),
            _compare("gamma_bound", (b - 4.0 * a**2) / math.sqrt(b), ">=", g, rtol),
            _compare("epsilon_floor", c.epsilon0, ">=", 1.0 / 20.0, rtol),
        )
    )


def c0_constant(c: HypocoCoefficients | None = None) -> float:
    c = c or default_coefficients()
    return math.sqrt(3.0 * math.e * (1.0 + 2.0 * c.alpha0 * c.epsilon0))


def kappa0_constant(c: HypocoCoefficients | None = None) -> float:
    c = c or default_coefficients()
    return c.epsilon0 / (1.0 + math.log(2.0 * c0_constant(c)))


def _check_nu(nu: float) -> None:
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu must lie in (0, 1], got {nu}")


def rate_formula(nu: float, k: int) -> float:
    """``sqrt(nu k) / (1 + |log nu| + log k)``."""
    _check_nu(nu)
    if k < 1:
        raise ValueError("k must be >= 1")
    return math.sqrt(nu * k) / (1.0 + abs(math.log(nu)) + math.log(k))


def rate_formula_nu(nu: float) -> float:
    """``sqrt(nu) / (1 + |log nu|)``."""
    _check_nu(nu)
    return math.sqrt(nu) / (1.0 + abs(math.log(nu)))


def transient_time(nu: float, k: int, c: HypocoCoefficients | None = None) -> float:
    """Time after which the weighted decay of ``Q_k`` takes over."""
    c = c or default_coefficients()
    _check_nu(nu)
    return (1.0 + abs(math.log(nu)) + math.log(k)) / (2.0 * c.epsilon0 * math.sqrt(nu * k))


# -- per-sample diagnostics -----------------------------------------------


@dataclass(frozen=True)
class DiagnosticsRecord:
    """All quadratic quantities of one band at one instant."""

    t: float
    l2_sq: float
    grad_sq: float
    cross: float
    yomega_x_sq: float
    grad_dxpsi_sq: float
    grad_psi_sq: float
    yomega_sq: float
    phi: float
    q: float
    x_norm_sq: float
    guard: bool
    # terms used only by the balance checks
    lap_sq: float = 0.0
    dxy_psi_sq: float = 0.0
    dx_omega_sq: float = 0.0
    y_dx_grad_sq: float = 0.0
    visc_cross: float = 0.0
    psi_cross: float = 0.0

    CSV_COLUMNS = (
        "t", "l2_sq", "grad_sq", "cross", "yomega_x_sq", "grad_dxpsi_sq",
        "phi", "q", "x_norm_sq", "guard",
    )  # fmt: skip

    def csv_row(self) -> list:
        return [getattr(self, name) for name in self.CSV_COLUMNS]


class _Pairing:
    def __init__(self, a: ModeField):
        self.grid = a.grid
        self.w = a.weight * a.grid.h

    def __call__(self, f, g) -> float:
        return float(self.w * np.real(np.vdot(g, f)))


def _terms(a: ModeField, psi: np.ndarray) -> dict:
    grid, k, v = a.grid, a.k, a.values
    ip = _Pairing(a)
    y2 = grid.y**2
    lap = grid.d2 @ v - k**2 * v
    shear = -1j * k * y2 * v
    l2 = ip(v, v)
    yomega = ip(grid.y * v, grid.y * v)
    grad_psi = -ip(psi, v)
    return dict(
        l2_sq=l2,
        grad_sq=-ip(lap, v),
        cross=0.5 * ip(lap, shear),
        yomega_x_sq=k**2 * yomega,
        grad_dxpsi_sq=k**2 * grad_psi,
        grad_psi_sq=grad_psi,
        yomega_sq=yomega,
        x_norm_sq=l2 + yomega,
        lap_sq=ip(lap, lap),
        dxy_psi_sq=-(k**2) * ip(psi, grid.d2 @ psi),
        dx_omega_sq=k**2 * l2,
        y_dx_grad_sq=k**2 * (l2 - ip(y2 * v, lap)),
        visc_cross=-0.25 * ip(grid.d2 @ lap - k**2 * lap, shear),
        psi_cross=-0.25 * k**2 * ip(y2 * v, 2j * k * psi),
    )


def _phi_from_terms(t: dict, k: int, c: HypocoCoefficients, nu: float) -> float:
    alpha, beta, gamma = c.scaled(nu, k)
    return 0.5 * (
        t["l2_sq"]
        + alpha * t["grad_sq"]
        + 4.0 * beta * t["cross"]
        + gamma * (t["yomega_x_sq"] + 2.0 * t["grad_dxpsi_sq"])
    )


def _q_from_terms(t: dict, c: HypocoCoefficients) -> float:
    return 0.5 * t["l2_sq"] + 0.25 * c.gamma0 * (t["yomega_sq"] + 2.0 * t["grad_psi_sq"])


def _stream(a: ModeField, psi) -> np.ndarray:
    if psi is None:
        return helmholtz_solver(a.k, a.grid).solve(a.values)
    return psi.values if isinstance(psi, ModeField) else np.asarray(psi)


def mode_diagnostics(
    a: ModeField,
    nu: float,
    c: HypocoCoefficients | None = None,
    t: float = 0.0,
    psi=None,
) -> DiagnosticsRecord:
    """Evaluate every diagnostic of band ``a.k``; ``phi`` and ``q`` are NaN on band 0."""
    c = c or default_coefficients()
    terms = _terms(a, _stream(a, psi))
    if a.k >= 1:
        phi, q = _phi_from_terms(terms, a.k, c, nu), _q_from_terms(terms, c)
    else:
        phi = q = math.nan
    return DiagnosticsRecord(t=float(t), phi=phi, q=q, guard=boundary_flag(a.values), **terms)


def compute_phi(a: ModeField, psi, c: HypocoCoefficients, nu: float) -> float:
    if a.k < 1:
        raise ValueError("Phi is defined for nonzero bands only")
    return _phi_from_terms(_terms(a, _stream(a, psi)), a.k, c, nu)


def compute_q(a: ModeField, psi, c: HypocoCoefficients) -> float:
    if a.k < 1:
        raise ValueError("Q is defined for nonzero bands only")
    return _q_from_terms(_terms(a, _stream(a, psi)), c)


def sandwich_bounds(a: ModeField, psi, c: HypocoCoefficients, nu: float) -> tuple[float, float]:
    """Lower and upper quadratic forms that enclose ``Phi_k``."""
    t = _terms(a, _stream(a, psi))
    alpha, _, gamma = c.scaled(nu, a.k)
    lower = 0.25 * (
        2 * t["l2_sq"] + alpha * t["grad_sq"] + gamma * t["yomega_x_sq"] + 4 * gamma * t["grad_dxpsi_sq"]
    )
    upper = 0.25 * (
        2 * t["l2_sq"] + 3 * alpha * t["grad_sq"] + 3 * gamma * t["yomega_x_sq"] + 4 * gamma * t["grad_dxpsi_sq"]
    )
    return lower, upper


# -- energy balances ------------------------------------------------------

#: name -> (quantity differentiated, its prefactor, [(coefficient, term, nu-scaled)])
_BALANCES = {
    "l2": ("l2_sq", 0.5, [(1.0, "grad_sq", True)]),
    "h1": ("grad_sq", 0.5, [(1.0, "lap_sq", True), (2.0, "cross", False)]),
    "cross": (
        "cross",
        1.0,
        [(2.0, "yomega_x_sq", False), (4.0, "dxy_psi_sq", False), (2.0, "visc_cross", True)],
    ),
    "weighted": (
        "yomega_x_sq",
        0.5,
        [(1.0, "y_dx_grad_sq", True), (-1.0, "dx_omega_sq", True), (4.0, "psi_cross", False)],
    ),
    "stream": ("grad_dxpsi_sq", 0.5, [(1.0, "dx_omega_sq", True), (-2.0, "psi_cross", False)]),
    "combined": (
        ("yomega_x_sq", "grad_dxpsi_sq"),
        0.5,
        [(1.0, "dx_omega_sq", True), (1.0, "y_dx_grad_sq", True)],
    ),
}
BALANCE_NAMES = tuple(_BALANCES)


@dataclass
class BalanceTable:
    """Relative residual of each balance at each interior sample."""

    times: np.ndarray
    residuals: dict[str, np.ndarray] = field(default_factory=dict)

    def max(self, name: str | None = None) -> float:
        if name is not None:
            r = self.residuals[name]
            return float(r.max()) if r.size else 0.0
        return max((self.max(n) for n in self.residuals), default=0.0)

    def worst(self) -> dict[str, float]:
        return {n: self.max(n) for n in self.residuals}


def _series(records: Sequence[DiagnosticsRecord], name) -> np.ndarray:
    if isinstance(name, tuple):
        a, b = name
        return np.array([getattr(r, a) + 2.0 * getattr(r, b) for r in records])
    return np.array([getattr(r, name) for r in records])


def balance_residuals(traj, nu: float) -> BalanceTable:
    """Check every balance by centered differences of the sampled quantities."""
    records = list(traj.diagnostics)
    if len(records) < 3:
        raise ValueError("at least three samples are needed")
    t = np.array([r.t for r in records])
    table = BalanceTable(times=t[1:-1])
    dt = t[2:] - t[:-2]
    for name, (quantity, pref, terms) in _BALANCES.items():
        q = _series(records, quantity)
        parts = [pref * (q[2:] - q[:-2]) / dt]
        for coef, term, scaled in terms:
            val = coef * _series(records, term)[1:-1]
            parts.append(nu * val if scaled else val)
        parts = np.array(parts)
        total = np.abs(parts.sum(axis=0))
        scale = np.abs(parts).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            table.residuals[name] = np.where(scale > 0, total / np.where(scale > 0, scale, 1.0), 0.0)
    return table


# -- decay checks and fits -------------------------------------------------


@dataclass(frozen=True)
class DecayReport:
    passed: bool
    worst_ratio: float
    worst_time: float
    n_samples: int


def _decay_check(times, values, envelope, tol) -> DecayReport:
    times, values = np.asarray(times, float), np.asarray(values, float)
    if values.size == 0 or values[0] == 0.0:
        return DecayReport(True, 0.0, 0.0, values.size)
    ratio = values / (envelope * values[0])
    i = int(np.argmax(ratio))
    return DecayReport(bool(np.all(ratio <= 1.0 + tol)), float(ratio[i]), float(times[i]), values.size)


def check_phi_inequality(traj, c: HypocoCoefficients, nu: float, tol: float = 0.05) -> DecayReport:
    """``Phi(t) <= (1 + tol) exp(-2 eps0 sqrt(nu k) t) Phi(0)`` at every sample."""
    k = traj.k
    times = np.array([r.t for r in traj.diagnostics])
    phi = np.array([r.phi for r in traj.diagnostics])
    env = np.exp(-2.0 * c.epsilon0 * math.sqrt(nu * k) * (times - times[0]))
    return _decay_check(times, phi, env, tol)


def check_q_inequality(traj, c: HypocoCoefficients, nu: float, tol: float = 0.0) -> DecayReport:
    """``Q(t) <= C0^2 exp(-2 eps0 lambda_{nu,k} t) Q(0)`` at every sample."""
    k = traj.k
    times = np.array([r.t for r in traj.diagnostics])
    q = np.array([r.q for r in traj.diagnostics])
    env = c0_constant(c) ** 2 * np.exp(-2.0 * c.epsilon0 * rate_formula(nu, k) * (times - times[0]))
    return _decay_check(times, q, env, tol)


def fit_decay_rate(times, values, window_fraction: float = 0.6, t_min: float | None = None):
    """Least-squares exponential rate over the trailing window.

    Parameters
    ----------
    times, values : array_like
        Sample times and positive sampled values.
    window_fraction : float
        Fraction of samples, counted from the end, used in the fit.
    t_min : float, optional
        Earliest admissible window start. Ignored when fewer than three
        samples lie after it.

    Returns
    -------
    rate : float
        Minus the fitted slope of ``log(values)``.
    r2 : float
        Coefficient of determination of the fit.
    """
    if not 0.0 < window_fraction <= 1.0:
        raise ValueError("window_fraction must lie in (0, 1]")
    times, values = np.asarray(times, float), np.asarray(values, float)
    start = int(math.floor((1.0 - window_fraction) * times.size))
    if t_min is not None:
        later = int(np.searchsorted(times, t_min))
        if times.size - later >= 3:
            start = max(start, later)
    t, v = times[start:], values[start:]
    if t.size < 2:
        raise ValueError("not enough samples in the fit window")
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("values in the fit window must be positive and finite")
    logv = np.log(v)
    slope, intercept = np.polyfit(t, logv, 1)
    resid = logv - (slope * t + intercept)
    sst = np.sum((logv - logv.mean()) ** 2)
    r2 = 1.0 if sst <= 1e-30 * max(1.0, np.sum(logv**2)) else 1.0 - np.sum(resid**2) / sst
    return float(-slope), float(r2)
