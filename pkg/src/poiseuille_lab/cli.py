"""Command-line driver.

Every subcommand reads a flat ``key=value`` config file (``--config``),
applies per-parameter overrides (``--nu 1e-3``, ``--k 1,2``) and writes
CSV files under ``--out``. Exit codes: 0 pass, 1 a checked inequality or
tolerance failed, 2 bad configuration or a refused guard.

CSV layout
----------
Each file starts with ``#`` header lines (artifact version, command, the
full effective config, seed, grid, coefficient set and the constants
``epsilon0, C0, kappa0`` and the rates ``lambda``), then one header row and
the data rows. Linear diagnostics use the columns::

    t, l2_sq, grad_sq, cross, yomega_x_sq, grad_dxpsi_sq, phi, q, x_norm_sq, guard

threshold runs append ``xt_ratio, p0_xnorm``. Balance files use
``t`` followed by one column per balance. Floats are written with
``repr`` so identical inputs produce byte-identical files; wall-clock
time is printed but never written.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .hypocoercivity import (
    HypocoCoefficients,
    DiagnosticsRecord,
    balance_residuals,
    c0_constant,
    check_coefficients,
    check_phi_inequality,
    check_q_inequality,
    default_coefficients,
    fit_decay_rate,
    kappa0_constant,
    rate_formula,
    rate_formula_nu,
)
from .linear import (
    DENSE_LIMIT,
    ConfigurationError,
    LinearModeSystem,
    SimulationError,
    dense_propagator_oracle,
    evolve_linear,
    gaussian_mode,
    heat_propagate,
    random_initial_data,
)
from .nonlinear import (
    DtPolicy,
    NonlinearSample,
    NonlinearSolver,
    SweepCell,
    ThresholdConfig,
    apriori_monitor,
    run_threshold,
    run_threshold_sweep,
    save_checkpoint,
    worker_count,
)
from .spectral import Grid

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


# -- configuration ----------------------------------------------------------


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _dt(text: str):
    return "auto" if text.strip() == "auto" else float(text)


def _choice(*options):
    def parse(text: str) -> str:
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text

    return parse


# key -> (parser, help)
KEYS: dict[str, tuple] = {
    "nu": (float, "viscosity"),
    "k": (_int_list, "comma-separated x bands"),
    "nus": (_float_list, "comma-separated viscosities of a sweep"),
    "multipliers": (_float_list, "comma-separated amplitude multipliers of a sweep"),
    "n_x": (int, "x collocation points"),
    "n_y": (int, "interior y grid points"),
    "L": (float, "channel half-width"),
    "fd_order": (int, "finite-difference order (2, 4, 6 or 8)"),
    "dt": (_dt, "time step or 'auto'"),
    "horizon": (float, "run length in horizon_units"),
    "horizon_units": (_choice("absolute", "phi", "T_nu"), "absolute, phi = 1/(eps0 sqrt(nu k)), T_nu"),
    "t": (float, "comparison time of the oracle"),
    "sample_every": (int, "steps between samples"),
    "n_samples": (int, "samples per nonlinear run"),
    "seed": (int, "seed of the initial data"),
    "data": (_choice("random", "gaussian", "zero"), "initial data recipe"),
    "width": (float, "Gaussian width"),
    "transport": (_bool, "include shear transport and the nonlocal term"),
    "phi_tol": (float, "relative slack of the Phi check"),
    "q_tol": (float, "relative slack of the Q check"),
    "balance_tol": (float, "largest accepted balance residual"),
    "oracle_tol": (float, "largest accepted oracle error"),
    "delta0": (float, "coefficient delta0"),
    "alpha0": (float, "coefficient alpha0"),
    "beta0": (float, "coefficient beta0"),
    "gamma0": (float, "coefficient gamma0"),
    "epsilon0": (float, "coefficient epsilon0"),
    "mu": (float, "amplitude exponent offset"),
    "C1": (float, "amplitude constant"),
    "multiplier": (float, "amplitude multiplier"),
    "bands": (_int_list, "bands carrying initial data"),
    "shear_fraction": (float, "band-0 share of the squared X norm"),
    "theta": (float, "shear phase per step of the adaptive dt rule"),
    "nonlinear": (_bool, "include the quadratic term"),
    "budget": (float, "largest n_x * n_y * steps per cell"),
    "p0_limit": (float, "tripwire on sup ||P0 w(t)||_X / ||w_in||_X"),
}

_LINEAR = dict(nu=1e-3, k=(1,), n_y=512, L=10.0, fd_order=8, seed=0, data="random", width=1.0)
# unset coefficients follow from delta0
_COEFFS = dict(delta0=512.0**-0.25, alpha0=None, beta0=None, gamma0=None, epsilon0=None)
_THRESHOLD = dict(
    nu=1e-3, mu=0.05, C1=1.0, multiplier=1.0, seed=0, horizon=2.0, horizon_units="T_nu",
    bands=(1, 2, 3, 4), shear_fraction=0.2, n_x=128, n_y=512, L=10.0, fd_order=8, dt=2.0,
    theta=0.1, n_samples=1000, nonlinear=True, budget=1e10, p0_limit=10.0,
)  # fmt: skip

DEFAULTS: dict[str, dict] = {
    "check-coeffs": dict(_COEFFS),
    "linear-decay": dict(
        _LINEAR, dt="auto", horizon=2.0, horizon_units="phi", sample_every=50, phi_tol=0.05, q_tol=0.0
    ),
    "verify-balances": dict(
        _LINEAR, dt="auto", horizon=200.0, horizon_units="absolute", sample_every=1, balance_tol=1e-3
    ),
    "oracle-compare": dict(
        nu=0.01, k=(1,), n_y=64, L=6.0, fd_order=8, dt=1e-3, t=1.0, transport=True,
        seed=0, data="random", width=1.0, oracle_tol=1e-5,
    ),  # fmt: skip
    "nonlinear-run": dict(_THRESHOLD),
    "threshold-sweep": {
        **{k: v for k, v in _THRESHOLD.items() if k not in ("nu", "multiplier")},
        "nus": (1e-2, 1e-3),
        "multipliers": (0.1, 1.0),
    },
}


@dataclass
class SimConfig:
    """Effective configuration of one invocation: defaults, then file, then flags."""

    command: str
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def echo(self) -> list[str]:
        return [f"{k}={_format(v)}" for k, v in sorted(self.values.items())]


def _format(value) -> str:
    if value is None:
        return "derived"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, command: str) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment. Unknown keys raise."""
    allowed = DEFAULTS[command]
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigurationError(f"line {n}: unknown key {key!r}")
        if key not in allowed:
            raise ConfigurationError(f"line {n}: key {key!r} is not used by {command}")
        out[key] = _parse_value(key, value)
    return out


def _parse_value(key: str, value: str):
    try:
        return KEYS[key][0](value)
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {exc}") from exc


def build_config(command: str, args: argparse.Namespace) -> SimConfig:
    values = dict(DEFAULTS[command])
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config: {exc}") from exc
        values.update(parse_config_text(text, command))
    for key in DEFAULTS[command]:
        raw = getattr(args, key, None)
        if raw is not None:
            values[key] = _parse_value(key, raw)
    if args.seed is not None:
        if "seed" not in values:
            raise ConfigurationError(f"{command} takes no seed")
        values["seed"] = args.seed
    return SimConfig(command, values)


# -- CSV output ---------------------------------------------------------------


def _grid_line(cfg: SimConfig) -> str:
    v = cfg.values
    if "n_y" not in v:
        return "none"
    n_x = v.get("n_x", 1)
    g = Grid(n_x if n_x > 1 else 4, v["L"], v["n_y"], v["fd_order"])
    return f"n_x={n_x} L={_format(g.L)} n_y={g.n_y} fd_order={g.fd_order} h={_format(g.h)}"


def header_lines(cfg: SimConfig, coeffs: HypocoCoefficients, extra: dict | None = None) -> list[str]:
    v = cfg.values
    lines = [
        f"artifact poiseuille_lab {__version__}",
        f"command {cfg.command}",
        *(f"config {e}" for e in cfg.echo()),
        f"seed {v.get('seed', 'none')}",
        f"grid {_grid_line(cfg)}",
        "coefficients " + " ".join(f"{k}={_format(x)}" for k, x in coeffs.as_dict().items()),
        f"constants epsilon0={_format(coeffs.epsilon0)} C0={_format(c0_constant(coeffs))} "
        f"kappa0={_format(kappa0_constant(coeffs))}",
    ]
    nus = list(v.get("nus", ())) + ([v["nu"]] if "nu" in v else [])
    for nu in nus:
        if 0 < nu <= 1:
            lam = [f"lambda_nu={_format(rate_formula_nu(nu))}"]
            lam += [f"lambda_nu_k{k}={_format(rate_formula(nu, k))}" for k in v.get("k", ()) if k >= 1]
            lines.append(f"rates nu={_format(nu)} " + " ".join(lam))
    for key, value in (extra or {}).items():
        lines.append(f"{key} {_format(value)}")
    return lines


def write_csv(path: Path, header: list[str], columns, rows) -> None:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(x) for x in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _tag(x: float) -> str:
    return f"{x:g}"


# -- subcommands -------------------------------------------------------------


class Outcome:
    """Collects a printed summary and the machine-readable report."""

    def __init__(self, command: str, as_json: bool):
        self.report: dict = {"command": command, "version": __version__}
        self.lines: list[str] = []
        self.as_json = as_json

    def say(self, text: str) -> None:
        self.lines.append(text)

    def emit(self, code: int) -> int:
        self.report["exit_code"] = code
        if self.as_json:
            print(json.dumps(self.report, indent=2, sort_keys=True, default=_json_default))
        else:
            print("\n".join(self.lines))
        return code


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(type(x))


def _coefficients(cfg: SimConfig) -> HypocoCoefficients:
    v = cfg.values
    base = HypocoCoefficients.from_delta(v["delta0"])
    names = ("alpha0", "beta0", "gamma0", "epsilon0")
    pick = {name: getattr(base, name) if v[name] is None else v[name] for name in names}
    try:
        return HypocoCoefficients(delta0=v["delta0"], **pick)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc


def cmd_check_coeffs(cfg: SimConfig, out: Outcome, out_dir: Path) -> int:
    c = _coefficients(cfg)
    report = check_coefficients(c)
    out.report["coefficients"] = c.as_dict()
    out.report["constraints"] = report.as_rows()
    out.report["C0"] = c0_constant(c)
    out.report["kappa0"] = kappa0_constant(c)
    out.report["passed"] = report.passed
    out.say(f"coefficients: {', '.join(f'{k}={v:.10g}' for k, v in c.as_dict().items())}")
    out.say(f"{'constraint':<14} {'lhs':>22} rel {'rhs':>22} {'slack':>12}  verdict")
    for r in report.results:
        out.say(
            f"{r.name:<14} {r.lhs:22.15g} {r.relation:>3} {r.rhs:22.15g} {r.slack:12.3e}  {'pass' if r.passed else 'FAIL'}"
        )
    out.say(f"C0 = {c0_constant(c):.6f}   kappa0 = {kappa0_constant(c):.6g}")
    if not report.passed:
        out.say(f"failing: {', '.join(report.failing)}")
    if out_dir is not None:
        rows = [[r["name"], r["lhs"], r["relation"], r["rhs"], r["slack"], r["passed"]] for r in report.as_rows()]
        write_csv(out_dir / "constraints.csv", header_lines(cfg, c), ("name", "lhs", "relation", "rhs", "slack", "passed"), rows)
    return EXIT_PASS if report.passed else EXIT_FAIL


def _linear_grid(cfg: SimConfig) -> Grid:
    v = cfg.values
    try:
        return Grid(n_x=4, L=v["L"], n_y=v["n_y"], fd_order=v["fd_order"])
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc


def _initial_mode(cfg: SimConfig, grid: Grid, k: int):
    v = cfg.values
    if v["data"] == "zero":
        return gaussian_mode(grid, k, v["width"]) * 0.0
    if v["data"] == "gaussian":
        return gaussian_mode(grid, k, v["width"])
    return random_initial_data(grid, k, v["seed"])


def _horizon(cfg: SimConfig, nu: float, k: int, c: HypocoCoefficients) -> float:
    v = cfg.values
    units = v["horizon_units"]
    if not v["horizon"] > 0:
        raise ConfigurationError("horizon must be positive")
    if units == "absolute":
        return v["horizon"]
    if units == "phi":
        if k < 1:
            raise ConfigurationError("horizon_units=phi needs k >= 1")
        return v["horizon"] / (c.epsilon0 * math.sqrt(nu * k))
    return v["horizon"] / (kappa0_constant(c) * rate_formula_nu(nu))


def _system(nu: float, k: int, grid: Grid, transport: bool = True) -> LinearModeSystem:
    if not 0 < nu <= 1:
        raise ConfigurationError(f"nu must lie in (0, 1], got {nu}")
    if k < 0:
        raise ConfigurationError("bands must be nonnegative")
    return LinearModeSystem(k, nu, grid, transport=transport)


def _linear_dt(cfg: SimConfig, sys: LinearModeSystem, fraction: float) -> float:
    dt = cfg["dt"]
    if dt == "auto":
        return fraction * sys.dt_max if math.isfinite(sys.dt_max) else 1e-2
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    if dt > sys.dt_max * (1.0 + 1e-12):
        raise ConfigurationError(
            f"dt={dt:g} exceeds the stability bound dt_max={sys.dt_max:.6g} for k={sys.k} (1/(k L^2 + 2k))"
        )
    return dt


def cmd_linear_decay(cfg: SimConfig, out: Outcome, out_dir: Path) -> int:
    c = default_coefficients()
    grid = _linear_grid(cfg)
    nu = cfg["nu"]
    ok = True
    out.report["runs"] = []
    for k in cfg["k"]:
        if k < 1:
            raise ConfigurationError("linear-decay needs bands k >= 1")
        sys = _system(nu, k, grid)
        dt = _linear_dt(cfg, sys, 1.0)
        T = _horizon(cfg, nu, k, c)
        start = time.perf_counter()
        traj = evolve_linear(sys, _initial_mode(cfg, grid, k), T, dt, cfg["sample_every"], c)
        elapsed = time.perf_counter() - start
        phi = check_phi_inequality(traj, c, nu, cfg["phi_tol"])
        q = check_q_inequality(traj, c, nu, cfg["q_tol"])
        rate, r2 = fit_decay_rate(traj.times, traj.series("phi"))
        bound = 2 * c.epsilon0 * math.sqrt(nu * k)
        bound_log = 2 * c.epsilon0 * rate_formula(nu, k)
        passed = phi.passed and q.passed
        ok &= passed
        run = dict(
            nu=nu, k=k, dt=traj.dt, T=T, n_steps=traj.n_steps, fitted_phi_rate=rate, fit_r2=r2,
            rate_bound=bound, rate_bound_log=bound_log, phi_worst_ratio=phi.worst_ratio,
            q_worst_ratio=q.worst_ratio, max_l2_increase=traj.max_l2_increase,
            max_monotone_increase=traj.max_monotone_increase, passed=passed,
        )  # fmt: skip
        out.report["runs"].append(run)
        out.say(
            f"nu={nu:g} k={k}: steps={traj.n_steps} dt={traj.dt:.4g} T={T:.4g} "
            f"fitted Phi rate={rate:.4g} vs 2eps0 sqrt(nu k)={bound:.4g} vs 2eps0 lambda_nu,k={bound_log:.4g}; "
            f"Phi ratio {phi.worst_ratio:.4f} (tol {cfg['phi_tol']:g}), Q ratio/C0^2 {q.worst_ratio:.4f} "
            f"-> {'pass' if passed else 'FAIL'} [{elapsed:.1f} s]"
        )
        if out_dir is not None:
            extra = dict(band=k, dt=traj.dt, T=T, n_steps=traj.n_steps)
            write_csv(
                out_dir / f"linear_decay_nu{_tag(nu)}_k{k}.csv",
                header_lines(cfg, c, extra),
                DiagnosticsRecord.CSV_COLUMNS,
                (d.csv_row() for d in traj.diagnostics),
            )
    out.report["passed"] = ok
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_verify_balances(cfg: SimConfig, out: Outcome, out_dir: Path) -> int:
    c = default_coefficients()
    grid = _linear_grid(cfg)
    nu, tol = cfg["nu"], cfg["balance_tol"]
    ok = True
    out.report["runs"] = []
    for k in cfg["k"]:
        sys = _system(nu, k, grid)
        dt = _linear_dt(cfg, sys, 0.5)
        T = _horizon(cfg, nu, k, c)
        traj = evolve_linear(sys, _initial_mode(cfg, grid, k), T, dt, cfg["sample_every"], c)
        table = balance_residuals(traj, nu)
        if k == 0:
            # only the L2 balance is meaningful without transport
            table.residuals = {"l2": table.residuals["l2"]}
        worst = table.worst()
        passed = table.max() <= tol
        ok &= passed
        out.report["runs"].append(dict(nu=nu, k=k, dt=traj.dt, T=T, worst=worst, passed=passed))
        out.say(f"nu={nu:g} k={k} dt={traj.dt:.4g} T={T:g} samples={len(traj.diagnostics)}")
        for name, value in worst.items():
            out.say(f"  {name:<9} max residual {value:.3e}  {'pass' if value <= tol else 'FAIL'}")
        if out_dir is not None:
            names = list(table.residuals)
            rows = (
                [t] + [table.residuals[n][i] for n in names] for i, t in enumerate(table.times)
            )
            write_csv(
                out_dir / f"balances_nu{_tag(nu)}_k{k}.csv",
                header_lines(cfg, c, dict(band=k, dt=traj.dt, T=T)),
                ["t", *names],
                rows,
            )
    out.report["passed"] = ok
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_oracle_compare(cfg: SimConfig, out: Outcome, out_dir: Path) -> int:

    grid = _linear_grid(cfg)
    if grid.n_y > DENSE_LIMIT:
        raise ConfigurationError(f"oracle comparison needs n_y <= {DENSE_LIMIT}, got {grid.n_y}")
    nu, t, tol = cfg["nu"], cfg["t"], cfg["oracle_tol"]
    if t < 0:
        raise ConfigurationError("t must be nonnegative")
    ok = True
    out.report["runs"] = []
    for k in cfg["k"]:
        sys = _system(nu, k, grid, cfg["transport"])
        dt = _linear_dt(cfg, sys, 1.0)
        a0 = _initial_mode(cfg, grid, k)
        if t > 0:
            traj = evolve_linear(sys, a0, t, dt, sample_every=10**9)
            got = traj.final.values
        else:
            got = a0.values
        if sys.has_transport:
            ref = dense_propagator_oracle(sys, t) @ a0.values
            oracle = "dense exponential"
        else:
            ref = heat_propagate(a0.values, nu, t, k, grid)
            oracle = "heat kernel"
        scale = np.linalg.norm(ref)
        err = float(np.linalg.norm(got - ref) / scale) if scale > 0 else float(np.linalg.norm(got))
        passed = err <= tol
        ok &= passed
        out.report["runs"].append(dict(k=k, nu=nu, t=t, dt=dt, oracle=oracle, relative_error=err, passed=passed))
        out.say(f"k={k} nu={nu:g} t={t:g} dt={dt:g}: relative error vs {oracle} {err:.3e} (tol {tol:g}) -> {'pass' if passed else 'FAIL'}")
    out.report["passed"] = ok
    return EXIT_PASS if ok else EXIT_FAIL


def _threshold_config(cfg: SimConfig, nu: float, multiplier: float) -> ThresholdConfig:
    v = cfg.values
    if not 0 < nu <= 1:
        raise ConfigurationError(f"nu must lie in (0, 1], got {nu}")
    if v["horizon_units"] == "phi":
        raise ConfigurationError("nonlinear runs take horizon_units absolute or T_nu")
    horizon = v["horizon"]
    if v["horizon_units"] == "absolute":
        horizon = horizon * kappa0_constant() * rate_formula_nu(nu)
    try:
        tc = ThresholdConfig(
            nu=nu, mu=v["mu"], C1=v["C1"], multiplier=multiplier, seed=v["seed"], horizon=horizon,
            shear_fraction=v["shear_fraction"], bands=tuple(v["bands"]), n_x=v["n_x"], L=v["L"],
            n_y=v["n_y"], fd_order=v["fd_order"], dt=v["dt"], theta=v["theta"],
            n_samples=v["n_samples"], budget=v["budget"], nonlinear=v["nonlinear"],
        )  # fmt: skip
        tc.grid  # validates the grid
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    if v["dt"] == "auto" or not v["dt"] > 0:
        raise ConfigurationError("nonlinear runs need a positive dt cap")
    if not tc.horizon > 0:
        raise ConfigurationError("horizon must be positive")
    return tc


def cmd_nonlinear_run(cfg: SimConfig, out: Outcome, out_dir: Path) -> int:
    tc = _threshold_config(cfg, cfg["nu"], cfg["multiplier"])
    if tc.cost > tc.budget:
        raise ConfigurationError(f"cost {tc.cost:.3g} exceeds budget {tc.budget:.3g}")
    start = time.perf_counter()
    traj, boot = run_threshold(tc)
    elapsed = time.perf_counter() - start
    s0 = traj.samples[0].diag
    x_in = math.sqrt(s0["x_norm_sq"])
    p0_ratio = float(traj.series("p0_xnorm").max() / x_in) if x_in > 0 else 0.0
    prop = apriori_monitor(traj, tc.mu)
    run = traj.run
    passed = boot.passed and p0_ratio <= cfg["p0_limit"]
    out.report.update(
        nu=tc.nu, amplitude=tc.amplitude, T=tc.T, n_steps=run.n_steps, verdict=boot.verdict,
        max_xt_ratio=boot.max_xt_ratio, max_bound_ratio=float(boot.bound_ratio.max()),
        crosses_2c0=boot.crosses_2c0, crosses_4c0=boot.crosses_4c0, p0_ratio=p0_ratio,
        worst_energy_residual=run.worst_energy_residual, worst_l2_increase=run.worst_l2_increase,
        monitor={n: dict(fitted_constant=q.fitted_constant, bound_constant=q.bound_constant, flagged=q.flagged)
                 for n, q in prop.quantities.items()},
        passed=passed,
    )  # fmt: skip
    out.say(f"nu={tc.nu:g} A={tc.amplitude:.4g} T={tc.T:.5g} steps={run.n_steps} [{elapsed:.1f} s]")
    out.say(
        f"bootstrap: verdict {boot.verdict}, max ||P w||/(2 C0 e^(-kappa0 lambda t) ||P w_in||) = "
        f"{boot.bound_ratio.max():.4g}, max X_t ratio {boot.max_xt_ratio:.4g}"
        f" (crosses 2C0: {boot.crosses_2c0}, 4C0: {boot.crosses_4c0})"
    )
    out.say(f"sup ||P0 w||_X / ||w_in||_X = {p0_ratio:.4g} (tripwire {cfg['p0_limit']:g})")
    out.say(f"energy law worst residual {run.worst_energy_residual:.3e}, worst per-step L2 increase {run.worst_l2_increase:.3e}")
    for name, q in prop.quantities.items():
        out.say(f"  {name:<15} max/scale {q.fitted_constant:.4g}  bound constant {q.bound_constant:.4g}  flagged {q.flagged}")
    if out_dir is not None:
        extra = dict(amplitude=tc.amplitude, T=tc.T, n_steps=run.n_steps, verdict=boot.verdict)
        tag = f"nu{_tag(tc.nu)}_m{_tag(tc.multiplier)}_s{tc.seed}"
        write_csv(
            out_dir / f"nonlinear_{tag}.csv",
            header_lines(cfg, default_coefficients(), extra),
            NonlinearSample.CSV_COLUMNS,
            (s.csv_row() for s in traj.samples),
        )

        solver = NonlinearSolver(tc.grid, tc.nu, nonlinear=tc.nonlinear, policy=DtPolicy("adaptive", tc.dt, tc.theta))
        save_checkpoint(out_dir / f"nonlinear_{tag}.npz", solver, run, tc.seed)
    return EXIT_PASS if passed else EXIT_FAIL


def cmd_threshold_sweep(cfg: SimConfig, out: Outcome, out_dir: Path) -> int:
    cells = [(nu, m) for nu in cfg["nus"] for m in cfg["multipliers"]]
    base = _threshold_config(cfg, cfg["nus"][0] if cfg["nus"] else 1e-3, 1.0)
    for nu, m in cells:
        _threshold_config(cfg, nu, m)
    workers = worker_count()
    start = time.perf_counter()
    report = run_threshold_sweep(cells, base, workers)
    elapsed = time.perf_counter() - start
    out.report["cells"] = [dict(zip(SweepCell.CSV_COLUMNS, c.csv_row()), note=c.note) for c in report.cells]
    out.report["passed"] = report.passed
    out.say(f"{len(cells)} cells, {min(workers, max(len(cells), 1))} workers [{elapsed:.1f} s]")
    out.say(f"{'nu':>8} {'mult':>6} {'compliant':>9} {'verdict':>8} {'rate':>11} {'bound':>11} {'max X_t':>9} {'P0 ratio':>9}")
    for c in report.cells:
        out.say(
            f"{c.nu:8g} {c.multiplier:6g} {str(c.compliant):>9} {c.verdict:>8} {c.fitted_rate:11.4g} "
            f"{c.rate_bound:11.4g} {c.max_xt_ratio:9.4g} {c.p0_ratio:9.4g} {c.note}"
        )
    if out_dir is not None:
        write_csv(
            out_dir / "threshold_sweep.csv",
            header_lines(cfg, default_coefficients()),
            SweepCell.CSV_COLUMNS,
            (c.csv_row() for c in report.cells),
        )
    return EXIT_PASS if report.passed else EXIT_FAIL


COMMANDS = {
    "check-coeffs": (cmd_check_coeffs, "check the admissibility of the functional's coefficients"),
    "linear-decay": (cmd_linear_decay, "linear runs per band with Phi and Q decay checks"),
    "verify-balances": (cmd_verify_balances, "residuals of the energy balances on a linear run"),
    "oracle-compare": (cmd_oracle_compare, "stepper against the dense exponential (or heat kernel)"),
    "nonlinear-run": (cmd_nonlinear_run, "one threshold run with bootstrap and shear monitors"),
    "threshold-sweep": (cmd_threshold_sweep, "verdict matrix over (nu, amplitude multiplier)"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poiseuille-lab", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", metavar="PATH", help="flat key=value file")
        p.add_argument("--seed", type=int, help="seed of the initial data")
        p.add_argument("--out", metavar="DIR", help="directory for CSV output (default: none written)")
        p.add_argument("--json", action="store_true", help="print a JSON report instead of text")
        group = p.add_argument_group("parameters")
        for key in DEFAULTS[name]:
            if key == "seed":
                continue
            flags = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
            group.add_argument(*flags, dest=key, metavar="VALUE", help=f"{KEYS[key][1]} (default {_format(DEFAULTS[name][key])})")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    handler = COMMANDS[args.command][0]
    out = Outcome(args.command, args.json)
    try:
        cfg = build_config(args.command, args)
        out.report["config"] = cfg.values
        code = handler(cfg, out, Path(args.out) if args.out else None)
    except ConfigurationError as exc:
        out.report["error"] = str(exc)
        out.say(f"configuration error: {exc}")
        return out.emit(EXIT_CONFIG)
    except SimulationError as exc:
        out.report["error"] = str(exc)
        out.say(f"simulation aborted: {exc}")
        return out.emit(EXIT_FAIL)
    return out.emit(code)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
