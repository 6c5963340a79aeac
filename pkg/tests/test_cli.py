from __future__ import annotations
import json

import pytest
from typer.testing import CliRunner

from hullsense.cli import EXIT_CONFIG, EXIT_RUN, app

runner = CliRunner()


@pytest.fixture
def scenario_file(tmp_path, scenario_dict):
    def write(**overrides):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(scenario_dict(**overrides), indent=2), encoding="utf-8")
        return path

    return write


def test_run_writes_artifacts(tmp_path, scenario_file):
    out = tmp_path / "out"
    result = runner.invoke(app, ["run", "-c", str(scenario_file()), "-o", str(out), "--override", "J_max=1"])
    assert result.exit_code == 0, result.output
    assert "[OK] small: 1 steps" in result.output
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 1
    assert (out / "metrics.csv").exists() and (out / "states.csv").exists()


def test_run_rejects_invalid_config(tmp_path, scenario_file):
    path = scenario_file(kappa=1.5)
    result = runner.invoke(app, ["run", "-c", str(path), "-o", str(tmp_path / "out")])
    assert result.exit_code == EXIT_CONFIG
    assert "/kappa" in result.output
    assert not (tmp_path / "out").exists()


def test_run_rejects_unknown_transport(tmp_path, scenario_file):
    result = runner.invoke(app, ["run", "-c", str(scenario_file()), "--transport", "udp"])
    assert result.exit_code == EXIT_CONFIG


def test_run_missing_config():
    result = runner.invoke(app, ["run", "-c", "nope.json"])
    assert result.exit_code == EXIT_CONFIG


def test_aborted_run_still_writes_artifacts(tmp_path, scenario_file):
    out = tmp_path / "out"
    path = scenario_file(solver={"max_iter": 1})
    result = runner.invoke(app, ["run", "-c", str(path), "-o", str(out)])
    assert result.exit_code == EXIT_RUN
    assert "run aborted" in result.output
    assert json.loads((out / "summary.json").read_text())["stop_reason"] == "Error"


def test_check_horizon_single_integrator(si_ring_path):
    result = runner.invoke(app, ["check-horizon", "-c", str(si_ring_path)])
    assert result.exit_code == 0, result.output
    assert "formula M:     11" in result.output
    assert "[PASS] M=11" in result.output


def test_check_horizon_warns_on_short_horizon(si_ring_path):
    result = runner.invoke(app, ["check-horizon", "-c", str(si_ring_path), "--override", "M=5"])
    assert result.exit_code == 0
    assert "[WARN] configured M=5 is below the bound 11" in result.output


def test_check_horizon_double_integrator(di_ring_path):
    result = runner.invoke(app, ["check-horizon", "-c", str(di_ring_path)])
    assert result.exit_code == 0, result.output
    assert "M1, M2:        2, 4" in result.output
    assert "values differ; both reported" in result.output


def test_verify_counterexample():
    result = runner.invoke(app, ["verify-counterexample"])
    assert result.exit_code == 0, result.output
    assert "0.9*sqrt(0.5)=0.636396" in result.output
    assert "[OK]" in result.output


def test_serve_agent_rejects_bad_address():
    result = runner.invoke(app, ["serve-agent", "--coordinator", "localhost", "--agent-id", "1"])
    assert result.exit_code == EXIT_CONFIG
