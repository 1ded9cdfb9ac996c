import json

import numpy as np
import pytest

from poiseuille_lab import __version__
from poiseuille_lab.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, main

FAST_LINEAR = ["--nu", "1e-2", "--n_y", "128", "--L", "7", "--horizon", "0.1"]
FAST_NONLINEAR = ["--nu", "1e-2", "--n_x", "16", "--n_y", "48", "--L", "6", "--horizon", "0.02", "--n_samples", "20"]


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def run_json(capsys, *argv):
    code, out = run(capsys, *argv, "--json")
    report = json.loads(out)
    assert report["exit_code"] == code
    return code, report


def read_csv(path):
    lines = path.read_text().splitlines()
    header = [ln[2:] for ln in lines if ln.startswith("# ")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return header, body[0].split(","), [row.split(",") for row in body[1:]]


class TestCheckCoeffs:
    def test_default_passes(self, capsys):
        code, out = run(capsys, "check-coeffs")
        assert code == EXIT_PASS
        assert "cross_term" in out and "FAIL" not in out

    def test_unit_coefficients_fail_and_are_named(self, capsys):
        code, out = run(capsys, "check-coeffs", "--alpha0", "1", "--beta0", "1", "--gamma0", "1")
        assert code == EXIT_FAIL
        assert "failing: cross_term" in out

    def test_json_matches_text_verdicts(self, capsys):
        code, report = run_json(capsys, "check-coeffs", "--alpha0", "1", "--beta0", "1", "--gamma0", "1")
        assert code == EXIT_FAIL and report["passed"] is False
        verdicts = {r["name"]: r["passed"] for r in report["constraints"]}
        assert verdicts["cross_term"] is False
        assert report["C0"] == pytest.approx(np.sqrt(3 * np.e * (1 + 2 * 1.0 * report["coefficients"]["epsilon0"])))

    def test_default_json(self, capsys):
        code, report = run_json(capsys, "check-coeffs")
        assert code == EXIT_PASS and report["version"] == __version__
        cross = next(r for r in report["constraints"] if r["name"] == "cross_term")
        assert abs(cross["slack"]) <= 1e-12
        assert report["config"]["alpha0"] is None

    def test_csv(self, capsys, tmp_path):
        run(capsys, "check-coeffs", "--out", str(tmp_path))
        header, cols, rows = read_csv(tmp_path / "constraints.csv")
        assert cols == ["name", "lhs", "relation", "rhs", "slack", "passed"]
        assert len(rows) == 5 and all(r[-1] == "true" for r in rows)

    def test_nonpositive_coefficient_is_config_error(self, capsys):
        code, out = run(capsys, "check-coeffs", "--alpha0", "-1")
        assert code == EXIT_CONFIG and "alpha0" in out


class TestLinearDecay:
    def test_fast_run_passes_and_writes_schema(self, capsys, tmp_path):
        code, out = run(capsys, "linear-decay", *FAST_LINEAR, "--k", "1,2", "--out", str(tmp_path))
        assert code == EXIT_PASS, out
        header, cols, rows = read_csv(tmp_path / "linear_decay_nu0.01_k2.csv")
        assert cols == "t,l2_sq,grad_sq,cross,yomega_x_sq,grad_dxpsi_sq,phi,q,x_norm_sq,guard".split(",")
        assert header[0] == f"artifact poiseuille_lab {__version__}"
        assert "seed 0" in header
        assert any(h.startswith("grid n_x=") and "n_y=128" in h for h in header)
        assert any(h.startswith("coefficients delta0=") for h in header)
        assert any(h.startswith("constants epsilon0=") and "C0=" in h and "kappa0=" in h for h in header)
        assert any(h.startswith("rates nu=0.01 lambda_nu=") and "lambda_nu_k2=" in h for h in header)
        assert "config nu=0.01" in header and "config k=1,2" in header
        assert rows[-1][-1] in ("true", "false") and float(rows[0][0]) == 0.0

    def test_seed_gives_byte_identical_csv(self, capsys, tmp_path):
        for d in ("a", "b"):
            run(capsys, "linear-decay", *FAST_LINEAR, "--seed", "7", "--out", str(tmp_path / d))
        name = "linear_decay_nu0.01_k1.csv"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        run(capsys, "linear-decay", *FAST_LINEAR, "--seed", "8", "--out", str(tmp_path / "c"))
        assert (tmp_path / "a" / name).read_bytes() != (tmp_path / "c" / name).read_bytes()

    def test_coarse_dt_refused(self, capsys):
        code, out = run(capsys, "linear-decay", "--dt", "0.5")
        assert code == EXIT_CONFIG
        assert "stability bound" in out

    def test_band_zero_refused(self, capsys):
        assert run(capsys, "linear-decay", *FAST_LINEAR, "--k", "0")[0] == EXIT_CONFIG

    def test_json_reports_rates(self, capsys):
        code, report = run_json(capsys, "linear-decay", *FAST_LINEAR)
        r = report["runs"][0]
        assert code == EXIT_PASS and r["passed"]
        assert r["rate_bound"] == pytest.approx(2 * 0.05255603 * 0.1, rel=1e-6)
        assert r["max_l2_increase"] <= 1e-12


class TestVerifyBalances:
    def test_zero_data_is_exact(self, capsys):
        code, report = run_json(capsys, "verify-balances", "--data", "zero", "--n_y", "64", "--L", "6", "--horizon", "1")
        assert code == EXIT_PASS
        assert all(v == 0.0 for v in report["runs"][0]["worst"].values())

    def test_heat_band(self, capsys, tmp_path):
        code, report = run_json(
            capsys, "verify-balances", "--k", "0", "--data", "gaussian", "--nu", "1e-2", "--horizon", "20", "--out", str(tmp_path)
        )
        assert code == EXIT_PASS
        assert list(report["runs"][0]["worst"]) == ["l2"]
        _, cols, _ = read_csv(tmp_path / "balances_nu0.01_k0.csv")
        assert cols == ["t", "l2"]

    def test_tolerance_failure_exits_one(self, capsys):
        code, _ = run(capsys, "verify-balances", "--n_y", "128", "--L", "7", "--horizon", "2", "--balance_tol", "1e-12")
        assert code == EXIT_FAIL


class TestOracleCompare:
    def test_default(self, capsys):
        code, report = run_json(capsys, "oracle-compare")
        assert code == EXIT_PASS
        assert report["runs"][0]["relative_error"] <= 1e-5

    def test_time_zero_is_identity(self, capsys):
        code, report = run_json(capsys, "oracle-compare", "--t", "0")
        assert code == EXIT_PASS and report["runs"][0]["relative_error"] <= 1e-14

    def test_diffusion_only_against_heat_kernel(self, capsys):
        code, report = run_json(capsys, "oracle-compare", "--transport", "false", "--k", "0,1")
        assert code == EXIT_PASS
        assert all(r["oracle"] == "heat kernel" and r["relative_error"] <= 1e-10 for r in report["runs"])

    def test_size_guard(self, capsys):
        code, out = run(capsys, "oracle-compare", "--n_y", "300")
        assert code == EXIT_CONFIG and "n_y" in out


class TestConfigHandling:
    def test_config_file_is_applied_and_echoed(self, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# fast run\nnu = 1e-2\nn_y=128\nL=7\nhorizon=0.1  # short\n")
        code, report = run_json(capsys, "linear-decay", "--config", str(cfg), "--out", str(tmp_path))
        assert code == EXIT_PASS
        assert report["config"]["n_y"] == 128 and report["config"]["nu"] == 0.01
        header, _, _ = read_csv(tmp_path / "linear_decay_nu0.01_k1.csv")
        assert "config L=7.0" in header

    def test_flags_override_file(self, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("nu=1e-2\nn_y=128\nL=7\nhorizon=0.1\n")
        _, report = run_json(capsys, "linear-decay", "--config", str(cfg), "--n-y", "100")
        assert report["config"]["n_y"] == 100

    @pytest.mark.parametrize(
        "text, needle",
        [
            ("nu=1e-3\nbogus=1\n", "unknown key 'bogus'"),
            ("multiplier=2\n", "not used by linear-decay"),
            ("nu=fast\n", "bad value for nu"),
            ("just words\n", "expected key=value"),
            ("horizon_units=days\n", "horizon_units"),
        ],
    )
    def test_bad_config_files(self, capsys, tmp_path, text, needle):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(text)
        code, out = run(capsys, "linear-decay", "--config", str(cfg))
        assert code == EXIT_CONFIG
        assert needle in out

    def test_missing_config_file(self, capsys, tmp_path):
        assert run(capsys, "check-coeffs", "--config", str(tmp_path / "none.cfg"))[0] == EXIT_CONFIG

    def test_usage_errors(self, capsys):
        assert main(["linear-decay", "--no-such-flag", "1"]) == EXIT_CONFIG
        assert main(["no-such-command"]) == EXIT_CONFIG
        assert main(["check-coeffs", "--help"]) == EXIT_PASS
        capsys.readouterr()

    def test_seed_refused_where_unused(self, capsys):
        assert run(capsys, "check-coeffs", "--seed", "3")[0] == EXIT_CONFIG

    def test_domain_errors(self, capsys):
        assert run(capsys, "linear-decay", "--nu", "2")[0] == EXIT_CONFIG
        assert run(capsys, "linear-decay", "--horizon", "-1")[0] == EXIT_CONFIG
        assert run(capsys, "linear-decay", "--fd_order", "5")[0] == EXIT_CONFIG


class TestNonlinearCommands:
    def test_nonlinear_run_outputs(self, capsys, tmp_path):
        code, report = run_json(capsys, "nonlinear-run", *FAST_NONLINEAR, "--out", str(tmp_path))
        assert code == EXIT_PASS and report["verdict"] == "pass"
        header, cols, rows = read_csv(tmp_path / "nonlinear_nu0.01_m1_s0.csv")
        assert cols[-2:] == ["xt_ratio", "p0_xnorm"] and len(cols) == 12
        assert float(rows[0][cols.index("xt_ratio")]) == 1.0
        assert (tmp_path / "nonlinear_nu0.01_m1_s0.npz").exists()
        assert any(h.startswith("verdict pass") for h in header)

    def test_budget_guard(self, capsys):
        code, out = run(capsys, "nonlinear-run", *FAST_NONLINEAR, "--budget", "10")
        assert code == EXIT_CONFIG and "budget" in out

    def test_sweep_deterministic_and_ordered(self, capsys, tmp_path):
        args = [a for a in FAST_NONLINEAR if a not in ("--nu", "1e-2")]
        for d in ("a", "b"):
            code, _ = run(capsys, "threshold-sweep", *args, "--nus", "1e-2,5e-3", "--multipliers", "0.1,1", "--out", str(tmp_path / d))
            assert code == EXIT_PASS
        a = (tmp_path / "a" / "threshold_sweep.csv").read_bytes()
        assert a == (tmp_path / "b" / "threshold_sweep.csv").read_bytes()
        _, cols, rows = read_csv(tmp_path / "a" / "threshold_sweep.csv")
        assert [(r[0], r[1]) for r in rows] == [("0.01", "0.1"), ("0.01", "1.0"), ("0.005", "0.1"), ("0.005", "1.0")]
        assert "runtime" not in cols

    def test_empty_sweep(self, capsys):
        code, report = run_json(capsys, "threshold-sweep", "--nus", "")
        assert code == EXIT_PASS and report["cells"] == []

    def test_skipped_and_informational_cells_do_not_fail(self, capsys):
        args = [a for a in FAST_NONLINEAR if a not in ("--nu", "1e-2")]
        code, report = run_json(capsys, "threshold-sweep", *args, "--nus", "1e-2", "--multipliers", "0.5,50")
        assert code == EXIT_PASS
        assert [c["compliant"] for c in report["cells"]] == [True, False]
        code, report = run_json(capsys, "threshold-sweep", *args, "--nus", "1e-2", "--budget", "1")
        assert code == EXIT_PASS
        assert {c["verdict"] for c in report["cells"]} == {"skipped"}

    def test_worker_env(self, capsys, monkeypatch):
        monkeypatch.setenv("POISEUILLE_WORKERS", "zero")
        assert run(capsys, "threshold-sweep", "--nus", "")[0] == EXIT_CONFIG

    def test_phi_units_refused(self, capsys):
        assert run(capsys, "nonlinear-run", "--horizon_units", "phi")[0] == EXIT_CONFIG
