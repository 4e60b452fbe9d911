"""Tests for the command-line interface."""

import json

import pytest
from click.testing import CliRunner

from src.cli import cli


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def grid_file(tmp_path, small_grid):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(small_grid))
    return path


class TestSynth:
    """Tests for the synth command."""

    def test_generates_cohort_and_truth(self, runner, tmp_path):
        """Test the cohort CSV and sidecar are written."""
        out = tmp_path / "cohort.csv"
        result = runner.invoke(cli, ["synth", "--out", str(out), "--n", "120", "--seed", "3"])

        assert result.exit_code == 0, result.output
        assert "✓ Cohort generated" in result.output
        assert out.exists()
        assert json.loads((tmp_path / "cohort.truth.json").read_text())["seed"] == 3

    def test_invalid_settings(self, runner, tmp_path):
        """Test invalid generator settings exit with code 2."""
        result = runner.invoke(cli, ["synth", "--out", str(tmp_path / "c.csv"), "--centers", "1"])
        assert result.exit_code == 2


class TestEstimate:
    """Tests for the estimate command."""

    def test_estimate_with_outputs(self, runner, tmp_path, cohort_csv, grid_file):
        """Test a one-off estimate and its exported files."""
        out = tmp_path / "est"
        result = runner.invoke(cli, [
            "estimate", "--input", str(cohort_csv), "--config", str(grid_file),
            "--method", "entropy", "--out", str(out),
        ])

        assert result.exit_code == 0, result.output
        assert "log HR:" in result.output
        for name in ("estimate.json", "weights.csv", "smd.csv", "scores.csv", "latent.csv"):
            assert (out / name).exists()
        assert json.loads((out / "estimate.json").read_text())["variant"] == "x-plus-u"

    def test_requires_one_input(self, runner):
        """Test estimate without an input exits with code 2."""
        result = runner.invoke(cli, ["estimate"])
        assert result.exit_code == 2

    def test_data_error(self, runner, tmp_path):
        """Test a malformed cohort exits with code 3."""
        bad = tmp_path / "bad.csv"
        bad.write_text("id,time,event\na,1,1\n")
        result = runner.invoke(cli, ["estimate", "--input", str(bad)])

        assert result.exit_code == 3
        assert "MissingColumnError" in result.output


class TestGrid:
    """Tests for the grid-style commands."""

    def test_benchmark_grid(self, runner, tmp_path, cohort_csv, grid_file):
        """Test a benchmark grid writes the report directory."""
        out = tmp_path / "report"
        result = runner.invoke(cli, [
            "grid", "--input", str(cohort_csv), "--config", str(grid_file),
            "--benchmark-loghr", "-0.4", "--out", str(out),
        ])

        assert result.exit_code == 0, result.output
        assert (out / "report.json").exists()
        assert (out / "manifest.json").exists()
        assert json.loads((out / "report.json").read_text())["experiment"] == "benchmark"

    def test_missing_input(self, runner, tmp_path, grid_file):
        """Test a non-synthetic grid without inputs exits with code 2."""
        result = runner.invoke(cli, ["grid", "--config", str(grid_file), "--out", str(tmp_path / "r")])
        assert result.exit_code == 2

    def test_missing_benchmark(self, runner, tmp_path, cohort_csv, grid_file):
        """Test a benchmark grid without a benchmark exits with code 2."""
        result = runner.invoke(cli, [
            "grid", "--input", str(cohort_csv), "--config", str(grid_file), "--out", str(tmp_path / "r"),
        ])
        assert result.exit_code == 2
        assert "ConfigurationError" in result.output

    def test_bad_benchmark_value(self, runner, tmp_path, cohort_csv):
        """Test an unparsable benchmark is a usage error."""
        result = runner.invoke(cli, [
            "grid", "--input", str(cohort_csv), "--benchmark-loghr", "[1, 2]", "--out", str(tmp_path / "r"),
        ])
        assert result.exit_code == 2

    def test_validate_rct(self, runner, tmp_path, grid_file):
        """Test the RCT command on a randomized synthetic cohort."""
        cohort = tmp_path / "rct.csv"
        assert runner.invoke(cli, ["synth", "--out", str(cohort), "--n", "300", "--rct", "--seed", "4"]).exit_code == 0

        out = tmp_path / "rct-report"
        result = runner.invoke(cli, [
            "validate-rct", "--input", str(cohort), "--config", str(grid_file), "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert (out / "tables" / "tost.csv").read_text()


class TestConfigInfo:
    """Tests for config-info."""

    def test_shows_settings(self, runner):
        """Test the configuration summary prints."""
        result = runner.invoke(cli, ["config-info"])

        assert result.exit_code == 0
        assert "Analysis:" in result.output
        assert "tau:" in result.output
