"""Tests for CLI functionality."""

import json
import tempfile
from pathlib import Path

import pandas as pd
import pytest
from click.testing import CliRunner

from letc_lab import __version__
from letc_lab.cli import main
from letc_lab.harness import AGGREGATE_HEADER


@pytest.fixture
def runner() -> CliRunner:
    """Create a CLI runner."""
    return CliRunner()


def _write_config(directory: Path, **overrides) -> Path:
    config = {
        "policies": ["letc", "oracle"],
        "d_grid": [2],
        "T_grid": [32, 64],
        "trials": 2,
        "out_dir": str(directory / "results"),
        **overrides,
    }
    path = directory / "config.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


class TestCLIBasics:
    """Test help and version output."""

    def test_help_lists_commands(self, runner: CliRunner) -> None:
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for command in ("simulate", "doubling", "plan", "spectrum", "calibrate", "evaluate", "generate-sales"):
            assert command in result.output

    def test_version(self, runner: CliRunner) -> None:
        result = runner.invoke(main, ["--version"])
        assert result.exit_code == 0
        assert __version__ in result.output


class TestCLIPlanCommand:
    """Test the plan command."""

    def test_experiment_plan(self, runner: CliRunner) -> None:
        result = runner.invoke(main, ["plan", "--T", "16384", "--d", "4"])
        assert result.exit_code == 0
        plan = json.loads(result.output)
        assert plan["T1"] == 125
        assert plan["T2"] == 8192
        assert plan["mode"] == "experiment"
        assert not plan["horizon_too_short"]

    def test_simple_plan(self, runner: CliRunner) -> None:
        result = runner.invoke(main, ["plan", "--T", "1000000", "--d", "4", "--mode", "simple", "--eta-max", "1.0"])
        assert result.exit_code == 0
        plan = json.loads(result.output)
        assert (plan["T1"], plan["T2"]) == (13816, 125000)

    def test_short_horizon_warning(self, runner: CliRunner) -> None:
        result = runner.invoke(main, ["plan", "--T", "100", "--d", "50", "--mode", "simple"])
        assert result.exit_code == 0
        assert "horizon is too short" in result.output

    def test_horizon_below_three_rejected(self, runner: CliRunner) -> None:
        result = runner.invoke(main, ["plan", "--T", "2", "--d", "4"])
        assert result.exit_code != 0


class TestCLISimulateCommand:
    """Test the simulate and doubling commands."""

    def test_simulate_small_grid(self, runner: CliRunner) -> None:
        with tempfile.TemporaryDirectory() as tmpdir:
            config = _write_config(Path(tmpdir))
            result = runner.invoke(main, ["simulate", "-c", str(config), "--seed", "3"])
            assert result.exit_code == 0, result.output
            out = Path(tmpdir) / "results"
            assert (out / "traces.csv").exists()
            assert (out / "results.json").exists()
            aggregate = pd.read_csv(out / "aggregate.csv")
            assert aggregate.columns.tolist() == AGGREGATE_HEADER
            assert len(aggregate) == 4
            assert "Wrote" in result.output
            payload = json.loads((out / "results.json").read_text(encoding="utf-8"))
            assert payload["config"]["base_seed"] == 3

    def test_out_flag_wins(self, runner: CliRunner) -> None:
        with tempfile.TemporaryDirectory() as tmpdir:
            config = _write_config(Path(tmpdir))
            other = Path(tmpdir) / "elsewhere"
            result = runner.invoke(main, ["simulate", "-c", str(config), "--out", str(other), "-f", "csv"])
            assert result.exit_code == 0, result.output
            assert (other / "aggregate.csv").exists()
            assert not (other / "results.json").exists()

    def test_invalid_config(self, runner: CliRunner) -> None:
        with tempfile.TemporaryDirectory() as tmpdir:
            config = _write_config(Path(tmpdir), trials=0)
            result = runner.invoke(main, ["simulate", "-c", str(config)])
            assert result.exit_code == 1
            assert "Invalid config" in result.output
            assert "trials" in result.output

    def test_doubling(self, runner: CliRunner) -> None:
        with tempfile.TemporaryDirectory() as tmpdir:
            config = _write_config(Path(tmpdir))
            result = runner.invoke(main, ["doubling", "-c", str(config), "--T0", "16", "--total-T", "112"])
            assert result.exit_code == 0, result.output
            assert (Path(tmpdir) / "results" / "doubling_aggregate.csv").exists()
            assert "d=2" in result.output


class TestCLISpectrumCommand:
    """Test the spectrum command."""

    def test_spectrum_with_critical_radius(self, runner: CliRunner) -> None:
        result = runner.invoke(main, ["spectrum", "--d", "2", "-n", "2000", "--T", "10000", "--eta", "0.1", "--eta", "0.5"])
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        assert len(payload["summary"]["eigenvalues"]) == 4
        assert payload["null_space"]["residual"] < 1e-10
        assert payload["critical"]["eta_star"] > 0.0
        assert [row["eta"] for row in payload["table"]] == [0.1, 0.5]

    def test_spectrum_only(self, runner: CliRunner) -> None:
        result = runner.invoke(main, ["spectrum", "--d", "3", "-n", "1000"])
        assert result.exit_code == 0, result.output
        assert "critical" not in json.loads(result.output)

    def test_default_radius_grid(self, runner: CliRunner) -> None:
        """Without --eta the table runs over a geometric grid ending at eta_max = (u - l) / 4."""
        result = runner.invoke(main, ["spectrum", "--d", "2", "-n", "2000", "--T", "10000"])
        assert result.exit_code == 0, result.output
        etas = [row["eta"] for row in json.loads(result.output)["table"]]
        assert len(etas) == 9
        assert etas[-1] == pytest.approx(0.5)
        assert etas[0] == pytest.approx(0.5 / 256)


class TestCLISalesCommands:
    """Test generate-sales, calibrate and evaluate."""

    def test_pipeline(self, runner: CliRunner) -> None:
        with tempfile.TemporaryDirectory() as tmpdir:
            sales = Path(tmpdir) / "sales.csv"
            truth = Path(tmpdir) / "truth.json"
            result = runner.invoke(
                main, ["generate-sales", str(sales), "-n", "2", "--days", "140", "--seed", "3", "--truth", str(truth)]
            )
            assert result.exit_code == 0, result.output
            assert "Wrote 280 records" in result.output
            assert set(json.loads(truth.read_text(encoding="utf-8"))) == {"SKU-001", "SKU-002"}

            result = runner.invoke(main, ["calibrate", str(sales), "--out", str(Path(tmpdir) / "cal")])
            assert result.exit_code == 0, result.output
            reports = json.loads((Path(tmpdir) / "cal" / "calibration.json").read_text(encoding="utf-8"))
            assert [r["product_id"] for r in reports] == ["SKU-001", "SKU-002"]

            result = runner.invoke(
                main,
                ["evaluate", str(sales), "--out", str(Path(tmpdir) / "ev"), "-p", "SKU-001", "--trials", "1", "--horizon", "30"],
            )
            assert result.exit_code == 0, result.output
            reports = json.loads((Path(tmpdir) / "ev" / "evaluation.json").read_text(encoding="utf-8"))
            assert len(reports) == 1
            assert reports[0]["product_id"] == "SKU-001"

    def test_unknown_product(self, runner: CliRunner) -> None:
        with tempfile.TemporaryDirectory() as tmpdir:
            sales = Path(tmpdir) / "sales.csv"
            runner.invoke(main, ["generate-sales", str(sales), "-n", "1", "--days", "30"])
            result = runner.invoke(main, ["evaluate", str(sales), "-p", "NOPE", "--out", str(Path(tmpdir) / "ev")])
            assert result.exit_code == 1
            assert "Unknown product" in result.output

    def test_missing_sales_file(self, runner: CliRunner) -> None:
        result = runner.invoke(main, ["calibrate", "does-not-exist.csv"])
        assert result.exit_code != 0
