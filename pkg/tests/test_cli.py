import json

import pytest
from click.testing import CliRunner

from vasim import sim
from vasim.cli import EXIT_IO, EXIT_PARSE, EXIT_VALIDATION, main

from conftest import FIXTURES


@pytest.fixture()
def runner():
    return CliRunner()


def _scenario_path(name: str) -> str:
    return str(FIXTURES / f"{name}.json")


class TestRun:
    def test_writes_all_outputs(self, runner, tmp_path):
        out = tmp_path / "out"
        result = runner.invoke(main, ["run", "--scenario",
                                      _scenario_path("quiescent_swim"),
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert (out / "trajectory.csv").is_file()
        assert (out / "events.jsonl").is_file()
        assert (out / "metrics.json").is_file()
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["net_path_displacement_m"] == pytest.approx(0.15046,
                                                                   rel=1e-3)

    def test_trajectory_csv_readable(self, runner, tmp_path):
        out = tmp_path / "out"
        result = runner.invoke(main, ["run", "--scenario",
                                      _scenario_path("coagulation_embolization"),
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        rows = sim.read_log(out / "trajectory.csv")
        assert rows[0].tick == 0
        assert rows[-1].time_s == pytest.approx(15.0)
        assert 0 in rows[0].occlusion

    def test_dt_override_doubles_rows(self, runner, tmp_path):
        base = tmp_path / "base"
        fine = tmp_path / "fine"
        r1 = runner.invoke(main, ["run", "--scenario",
                                  _scenario_path("quiescent_swim"),
                                  "--out", str(base)])
        r2 = runner.invoke(main, ["run", "--scenario",
                                  _scenario_path("quiescent_swim"),
                                  "--out", str(fine), "--dt", "0.0005"])
        assert r1.exit_code == 0 and r2.exit_code == 0
        n1 = len(sim.read_log(base / "trajectory.csv"))
        n2 = len(sim.read_log(fine / "trajectory.csv"))
        assert n2 - 1 == 2 * (n1 - 1)

    def test_missing_file_is_io_error(self, runner, tmp_path):
        result = runner.invoke(main, ["run", "--scenario",
                                      str(tmp_path / "nope.json")])
        assert result.exit_code == EXIT_IO

    def test_invalid_json_is_parse_error(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        result = runner.invoke(main, ["run", "--scenario", str(bad)])
        assert result.exit_code == EXIT_PARSE

    def test_semantic_error_is_validation_error(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({
            "network": str(FIXTURES / "straight_3p5.json"),
            "initial_pose": {"segment": 0, "s_mm": 9999.0}}))
        result = runner.invoke(main, ["run", "--scenario", str(bad)])
        assert result.exit_code == EXIT_VALIDATION

    def test_determinism_across_invocations(self, runner, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            result = runner.invoke(main, ["run", "--scenario",
                                          _scenario_path("branch_navigation"),
                                          "--out", str(out)])
            assert result.exit_code == 0
            outs.append((out / "trajectory.csv").read_bytes())
        assert outs[0] == outs[1]


class TestCalibrate:
    def test_fit_report(self, runner, tmp_path):
        csv = tmp_path / "cal.csv"
        csv.write_text("rpm,speed_cm_per_s\n"
                       "2000,2.6\n8400,14.5\n30000,58.6\n")
        out = tmp_path / "fit.json"
        result = runner.invoke(main, ["calibrate", str(csv), "--out", str(out)])
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text())
        assert report["slope_m_s_per_hz"] == pytest.approx(
            0.0012063553022794843, rel=1e-9)
        assert report["intercept_m_s"] == pytest.approx(
            -0.018426412289395296, rel=1e-9)
        assert report["max_residual_cm_s"] < 0.6

    def test_bad_rows_parse_error(self, runner, tmp_path):
        csv = tmp_path / "cal.csv"
        csv.write_text("2000,fast\n")
        result = runner.invoke(main, ["calibrate", str(csv)])
        assert result.exit_code == EXIT_PARSE

    def test_single_point_validation_error(self, runner, tmp_path):
        csv = tmp_path / "cal.csv"
        csv.write_text("2000,2.6\n2000,2.7\n")
        result = runner.invoke(main, ["calibrate", str(csv)])
        assert result.exit_code == EXIT_VALIDATION

    def test_missing_file_io_error(self, runner, tmp_path):
        result = runner.invoke(main, ["calibrate", str(tmp_path / "nope.csv")])
        assert result.exit_code == EXIT_IO


class TestServeReplayArgs:
    def test_serve_unknown_scenario(self, runner):
        result = runner.invoke(main, ["serve", "--scenario", "no_such_one"])
        assert result.exit_code == EXIT_IO

    def test_replay_missing_log(self, runner, tmp_path):
        result = runner.invoke(main, ["replay", "--log",
                                      str(tmp_path / "nope.csv")])
        assert result.exit_code == EXIT_IO

    def test_replay_bad_schema(self, runner, tmp_path):
        log = tmp_path / "bad.csv"
        log.write_text("tick,nonsense\n0,1\n")
        result = runner.invoke(main, ["replay", "--log", str(log)])
        assert result.exit_code == EXIT_VALIDATION

    def test_help_lists_subcommands(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for sub in ("run", "calibrate", "serve", "replay"):
            assert sub in result.output
