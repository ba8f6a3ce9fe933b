"""End-to-end runs of small experiments through the runner and the CLI."""
import json
from pathlib import Path

import pandas as pd
import pytest

from quenched_limits.config import DEFAULT_TOLERANCES, parse_config
from quenched_limits.main import main
from quenched_limits.runner import run

pytestmark = pytest.mark.integration


def plan_text(kind: str, experiment: str = "", observable: str = "", extra: str = "",
              maps: str = "doubling") -> str:
    return (
        f"[model]\nmaps = {maps}\nseed = 7\n\n"
        "[discretization]\nn_cells = 64\n\n"
        f"[observable]\n{observable}\n"
        f"[experiment]\nkind = {kind}\n{experiment}\n"
        f"{extra}"
    )


LAMBDA_EXPERIMENT = "n_orbit = 100\nn_burn = 16\ntheta_grid = linspace(-0.2, 0.2, 5)\n"


def load_summary(folder, kind):
    with open(Path(folder) / f"{kind}_7.json", "r", encoding="utf-8") as f:
        return json.load(f)


class TestRun:
    """Runner outcomes, checks and artifacts."""

    def test_validate(self, temp_dir):
        """Doubling passes validation and writes CSV plus JSON."""
        summary = run(parse_config(plan_text("validate")), out_dir=temp_dir)
        assert summary.status == "success"
        assert summary.exit_code == 0
        names = {Path(p).name for p in summary.artifacts}
        assert {"validate_7.csv", "validate_7.json"} <= names
        table = pd.read_csv(Path(temp_dir) / "validate_7.csv")
        assert table["branches"].tolist() == [2]
        saved = load_summary(temp_dir, "validate")
        assert saved["exit_code"] == 0
        assert [c["name"] for c in saved["checks"]] == ["admissible", "variation_axioms"]

    def test_every_tolerance_reported_once(self, temp_dir):
        summary = run(parse_config(plan_text("lambda", LAMBDA_EXPERIMENT)), out_dir=temp_dir)
        assert [c.name for c in summary.checks] == list(DEFAULT_TOLERANCES["lambda"])
        assert summary.exit_code == 0
        assert all(c.status == "pass" for c in summary.checks)

    def test_degenerate_variance_is_an_error(self, temp_dir):
        """A forced sigma2 of 0 refuses the CLT with exit code 1."""
        experiment = "n = 50\ncount = 100\nvariance_orbit = 50\nj_max = 8\nsigma2 = 0\n"
        summary = run(parse_config(plan_text("clt", experiment)), out_dir=temp_dir)
        assert summary.status == "error"
        assert summary.error_type == "DegenerateVariance"
        assert summary.exit_code == 1
        assert [c.status for c in summary.checks] == ["fail", "fail"]
        assert load_summary(temp_dir, "clt")["error_type"] == "DegenerateVariance"
        assert not (Path(temp_dir) / "clt_7.csv").exists()

    def test_density(self, temp_dir):
        summary = run(parse_config(plan_text("density", "theta = 0.1\n")), out_dir=temp_dir)
        assert summary.exit_code == 0
        table = pd.read_csv(Path(temp_dir) / "density_7.csv")
        assert list(table.columns) == ["x", "v0", "v_real", "v_imag", "phi_real", "phi_imag"]
        assert len(table) == 64
        assert abs(table["v_real"].mean() - 1.0) < 1e-12

    def test_clt(self, temp_dir):
        experiment = "n = 200\ncount = 4000\nvariance_orbit = 200\nj_max = 16\nn_burn = 16\n"
        extra = "[tolerances]\nclt_ks = 0.1\nclt_variance = 0.15\n"
        summary = run(parse_config(plan_text("clt", experiment, extra=extra)), out_dir=temp_dir)
        assert summary.exit_code == 0, summary.message
        assert summary.result["sigma2"] == pytest.approx(0.5, abs=1e-6)
        table = pd.read_csv(Path(temp_dir) / "clt_7.csv")
        assert list(table.columns) == ["z", "ecdf", "gaussian_cdf"]
        assert len(table) == 41

    def test_periodic_lclt(self, temp_dir):
        """The centered indicator takes the lattice branch without a scan."""
        experiment = "n = 100\ncount = 50000\nsigma2 = 0.25\nn_orbit = 50\nn_burn = 16\n"
        summary = run(parse_config(plan_text("lclt", experiment, "kind = indicator\n")), out_dir=temp_dir)
        assert summary.exit_code == 0, summary.message
        assert summary.result["periodic"]
        assert summary.result["lattice_span"] == 1.0
        assert summary.result["eta_bar_n"] == pytest.approx(-50.0)
        assert summary.result["off_lattice_mass"] == 0.0
        assert summary.result["aperiodicity"] is None

    def test_aperiodicity_of_indicator(self, temp_dir):
        experiment = "n_orbit = 50\nn_burn = 16\nt_grid = 0.5, 1.0\n"
        summary = run(parse_config(plan_text("aperiodicity", experiment, "kind = indicator\n")), out_dir=temp_dir)
        assert summary.exit_code == 0
        assert summary.result["classification"] == "periodic_lattice"
        table = pd.read_csv(Path(temp_dir) / "aperiodicity_7.csv")
        assert list(table.columns) == ["t", "lambda_it", "rho_fit", "morita_n0"]

    def test_plot_and_matrices(self, temp_dir):
        extra = "[output]\nplot = true\ndump_matrices = true\nformats = json, yaml\n"
        summary = run(parse_config(plan_text("lambda", LAMBDA_EXPERIMENT, extra=extra)), out_dir=temp_dir)
        names = {Path(p).name for p in summary.artifacts}
        assert {"lambda_7.csv", "lambda_7.svg", "ulam_7_0.txt", "lambda_7.json", "lambda_7.yaml"} <= names


class TestDeterminism:
    """Same plan, same bytes."""

    def test_lambda_csv_independent_of_workers_and_directory(self, temp_dir):
        plan = parse_config(plan_text("lambda", LAMBDA_EXPERIMENT, maps="doubling | tripling"))
        first, second = Path(temp_dir) / "one", Path(temp_dir) / "two"
        run(plan.with_overrides(workers=1), out_dir=str(first))
        run(plan.with_overrides(workers=3), out_dir=str(second))
        assert (first / "lambda_7.csv").read_bytes() == (second / "lambda_7.csv").read_bytes()


class TestCli:
    """Exit codes of the command-line entry point."""

    def test_validate_exit_zero(self, temp_dir, config_file):
        path = config_file(plan_text("validate"))
        with pytest.raises(SystemExit) as info:
            main(["validate", "--config", str(path), "--out", str(Path(temp_dir) / "out")])
        assert info.value.code == 0

    def test_subcommand_sets_kind(self, temp_dir, config_file):
        path = config_file(plan_text("lambda", LAMBDA_EXPERIMENT))
        with pytest.raises(SystemExit) as info:
            main(["validate", "--config", str(path), "--out", temp_dir])
        assert info.value.code == 0
        assert (Path(temp_dir) / "validate_7.json").exists()

    def test_config_error_exit_two(self, temp_dir, config_file):
        path = config_file(plan_text("validate", "n_orbits = 3\n"))
        with pytest.raises(SystemExit) as info:
            main(["validate", "--config", str(path), "--out", temp_dir])
        assert info.value.code == 2

    def test_lenient_mode(self, temp_dir, config_file):
        path = config_file(plan_text("validate", "n_orbits = 3\n"))
        with pytest.raises(SystemExit) as info:
            main(["validate", "--config", str(path), "--out", temp_dir, "--lenient"])
        assert info.value.code == 0

    def test_missing_config_file(self, temp_dir):
        with pytest.raises(SystemExit) as info:
            main(["lambda", "--config", str(Path(temp_dir) / "absent.ini")])
        assert info.value.code == 2

    def test_plot_command(self, temp_dir):
        csv = Path(temp_dir) / "lambda_1.csv"
        pd.DataFrame({"theta": [-0.1, 0.0, 0.1], "lambda_value": [0.0025, 0.0, 0.0025]}).to_csv(csv, index=False)
        main(["plot", str(csv), "--kind", "lambda"])
        assert csv.with_suffix(".svg").exists()

    def test_plot_schema_mismatch(self, temp_dir):
        csv = Path(temp_dir) / "bad.csv"
        pd.DataFrame({"x": [1.0]}).to_csv(csv, index=False)
        with pytest.raises(SystemExit) as info:
            main(["plot", str(csv), "--kind", "lclt"])
        assert info.value.code == 2
