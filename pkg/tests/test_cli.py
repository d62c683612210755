"""Tests for the click command line in runner.py."""

import pandas as pd
import pytest
from click.testing import CliRunner

from lib.reports import SWEEP_COLUMNS
from runner import main

SCENARIO_YAML = """\
scenario:
  scenario: walker
  frames: 3
  resolution: 3
  seed: 2
codec:
  gof_size: 3
  generator:
    target_count: 8
    max_rounds: 2
  solver:
    max_outer_iters: 2
    max_inner_iters: 10
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "walker.yml"
    path.write_text(SCENARIO_YAML)
    return path


@pytest.fixture
def encoded(runner, scenario_file, tmp_path):
    output = tmp_path / "walker.bmkn"
    result = runner.invoke(main, ["encode", str(scenario_file), str(output), "--report", str(tmp_path / "rd.csv")])
    assert result.exit_code == 0, result.output
    return output, result


class TestCli:
    def test_usage_without_command(self, runner):
        result = runner.invoke(main, [])
        assert "Usage" in result.output

    def test_synthesize(self, runner, tmp_path):
        out = tmp_path / "drift"
        result = runner.invoke(main, ["synthesize", "drift", str(out), "--frames", "2", "--resolution", "3"])
        assert result.exit_code == 0, result.output
        assert "drift: 2 frames, 196 vertices" in result.output
        assert (out / "frame_0000.obj").is_file()
        assert (out / "frame_0001.obj").is_file()

    def test_synthesize_invalid_resolution(self, runner, tmp_path):
        result = runner.invoke(main, ["synthesize", "walker", str(tmp_path / "w"), "--resolution", "1"])
        assert result.exit_code == 2

    def test_encode_reports_frames(self, encoded, tmp_path):
        output, result = encoded
        assert output.stat().st_size > 0
        assert "GoF 0 frame 0: I-frame" in result.output
        assert "GoF 0 frame 1: mask" in result.output
        assert "spatial translations" in result.output
        assert "walker: 3 frames" in result.output
        rd = pd.read_csv(tmp_path / "rd.csv")
        assert len(rd) == 8
        assert "J" in rd.columns
        assert rd["selected"].sum() == 1

    def test_decode_and_check(self, runner, encoded, scenario_file, tmp_path):
        output, _ = encoded
        result = runner.invoke(
            main,
            ["decode", str(output), str(tmp_path / "decoded"), "--check", str(scenario_file), "--csv", str(tmp_path / "rmse.csv")],
        )
        assert result.exit_code == 0, result.output
        assert "Decoded 3 frames" in result.output
        assert "frame 2: rmse" in result.output
        rmse = pd.read_csv(tmp_path / "rmse.csv")
        assert list(rmse.columns) == ["frame", "rmse"]
        # the I-frame only loses float32 precision
        assert rmse["rmse"].iloc[0] < 1e-6

    def test_metrics_of_identical_sequences(self, runner, tmp_path):
        out = tmp_path / "drift"
        runner.invoke(main, ["synthesize", "drift", str(out), "--frames", "2", "--resolution", "3"])
        result = runner.invoke(main, ["metrics", str(out), str(out)])
        assert result.exit_code == 0, result.output
        assert "mean rmse 0" in result.output

    @pytest.mark.slow
    def test_sweep(self, runner, scenario_file, tmp_path):
        output = tmp_path / "sweep.csv"
        result = runner.invoke(
            main,
            [
                "sweep",
                str(scenario_file),
                "--lambdas",
                "0,1e-3,1",
                "--qsteps",
                "1e-3,2e-3,4e-3",
                "--nodes",
                "8",
                "--output",
                str(output),
            ],
        )
        assert result.exit_code == 0, result.output
        df = pd.read_csv(output)
        assert list(df.columns) == SWEEP_COLUMNS
        assert len(df) == 9
        assert df["rate_bytes"].is_monotonic_increasing
        assert ((df["motion_bytes"] > 0) & (df["motion_bytes"] < df["rate_bytes"])).all()
        assert set(df["scenario"]) == {"walker"}

    def test_corrupt_file(self, runner, tmp_path):
        path = tmp_path / "junk.bmkn"
        path.write_bytes(b"junk" * 8)
        result = runner.invoke(main, ["decode", str(path), str(tmp_path / "out")])
        assert result.exit_code == 1
        assert "BadMagic" in result.output

    def test_unknown_scenario(self, runner, tmp_path):
        result = runner.invoke(main, ["encode", "jog", str(tmp_path / "x.bmkn")])
        assert result.exit_code == 1
        assert "UnknownScenario" in result.output

    def test_invalid_override(self, runner, scenario_file, tmp_path):
        result = runner.invoke(main, ["encode", str(scenario_file), str(tmp_path / "x.bmkn"), "--lambda", "-1"])
        assert result.exit_code == 2
