"""Command-line entry points: batch runs, calibration, live serving, replay.

Exit codes: 0 success, 2 parse failure, 3 validation failure, 4 I/O failure.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from . import server, sim, vessels
from .sim import RPM_PER_HZ
from .spinner import calibrate_propulsion, propulsion_speed

EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_scenario_file(path: str, dt_override: float | None) -> sim.Scenario:
    p = Path(path)
    if not p.is_file():
        _fail(EXIT_IO, f"scenario file not found: {p}")
    try:
        text = p.read_text()
    except OSError as e:
        _fail(EXIT_IO, f"cannot read {p}: {e}")
    try:
        if dt_override is not None:
            doc = json.loads(text)
            doc["dt_s"] = dt_override
            text = json.dumps(doc)
        scenario = sim.load_scenario(text, p.parent)
    except (sim.ScenarioParseError, vessels.NetworkParseError,
            json.JSONDecodeError) as e:
        _fail(EXIT_PARSE, str(e))
    except (sim.ScenarioError, vessels.NetworkError, ValueError) as e:
        _fail(EXIT_VALIDATION, str(e))
    return scenario


@click.group()
def main():
    """Milli-spinner vascular navigation simulator."""


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=str,
              help="Scenario JSON file.")
@click.option("--out", "out_dir", default="out", show_default=True,
              help="Output directory for trajectory/events/metrics.")
@click.option("--dt", "dt_override", type=float, default=None,
              help="Override the scenario timestep [s].")
def run(scenario_path, out_dir, dt_override):
    """Run a scripted scenario and write trajectory CSV, events JSONL and
    metrics JSON."""
    scenario = _load_scenario_file(scenario_path, dt_override)
    try:
        result = sim.run_scenario(scenario)
    except (sim.ScenarioError, vessels.NetworkError, ValueError) as e:
        _fail(EXIT_VALIDATION, str(e))
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        sim.write_log(result.trajectory, out / "trajectory.csv")
        sim.write_events(result.events, out / "events.jsonl")
        sim.write_metrics(result.metrics, out / "metrics.json")
    except OSError as e:
        _fail(EXIT_IO, f"cannot write outputs: {e}")
    click.echo(f"{scenario.name}: {len(result.trajectory) - 1} steps, "
               f"{len(result.events)} events -> {out}")


@main.command()
@click.argument("csv_path", type=str)
@click.option("--out", "out_path", default=None,
              help="Optional JSON file for the fit report.")
def calibrate(csv_path, out_path):
    """Fit the propulsion law from CSV rows `rpm,speed_cm_per_s`."""
    p = Path(csv_path)
    if not p.is_file():
        _fail(EXIT_IO, f"calibration file not found: {p}")
    samples = []
    try:
        for line in p.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#") or line.lower().startswith("rpm"):
                continue
            rpm_s, speed_s = line.split(",")
            samples.append((float(rpm_s) / RPM_PER_HZ, float(speed_s) / 100.0))
    except ValueError as e:
        _fail(EXIT_PARSE, f"bad calibration row: {e}")
    try:
        fit = calibrate_propulsion(samples)
    except ValueError as e:
        _fail(EXIT_VALIDATION, str(e))
    residuals = [propulsion_speed(f, fit) - v for f, v in samples]
    report = {
        "slope_m_s_per_hz": fit.slope,
        "intercept_m_s": fit.intercept,
        "slope_cm_s_per_krpm": fit.slope * 1000.0 / RPM_PER_HZ * 100.0,
        "residuals_cm_s": [r * 100.0 for r in residuals],
        "max_residual_cm_s": max(abs(r) for r in residuals) * 100.0,
    }
    click.echo(json.dumps(report, indent=2))
    if out_path:
        try:
            Path(out_path).write_text(json.dumps(report, indent=2) + "\n")
        except OSError as e:
            _fail(EXIT_IO, f"cannot write report: {e}")


@main.command()
@click.option("--scenario", "scenario_ref", default="quiescent_swim",
              show_default=True,
              help="Scenario fixture name or JSON file path.")
@click.option("--port", default=8700, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(scenario_ref, port, host):
    """Run the live teleoperation server (WebSocket endpoint /ws)."""
    import uvicorn

    catalog = server.scenario_catalog()
    path = Path(scenario_ref)
    if not path.is_file():
        if scenario_ref not in catalog:
            _fail(EXIT_IO, f"scenario not found: {scenario_ref}")
        path = catalog[scenario_ref]
    try:
        scenario = sim.load_scenario(path.read_text(), path.parent)
    except sim.ScenarioParseError as e:
        _fail(EXIT_PARSE, str(e))
    except (sim.ScenarioError, vessels.NetworkError) as e:
        _fail(EXIT_VALIDATION, str(e))
    session = server.SimSession(scenario)
    app = server.create_app(session, catalog)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
@click.option("--log", "log_path", required=True, type=str,
              help="Trajectory CSV produced by `vasim run`.")
@click.option("--port", default=8700, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--speed", default=1.0, show_default=True, type=float,
              help="Playback speed multiplier.")
def replay(log_path, port, host, speed):
    """Stream a recorded trajectory as snapshots; no simulation runs."""
    import uvicorn

    p = Path(log_path)
    if not p.is_file():
        _fail(EXIT_IO, f"log file not found: {p}")
    try:
        rows = sim.read_log(p)
    except sim.LogSchemaError as e:
        _fail(EXIT_VALIDATION, str(e))
    app = server.create_replay_app(rows, speed)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
