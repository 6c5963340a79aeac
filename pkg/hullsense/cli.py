"""
Command-line entry points.

Exit codes: 0 success, 1 verification failure, 2 configuration or usage
error, 3 run aborted or transport failure.
"""
from __future__ import annotations
import asyncio
import math
from pathlib import Path
from typing import List, Optional, Tuple

# Load environment from .env early (if available)
try:
    from dotenv import find_dotenv, load_dotenv

    _dotenv_path = find_dotenv(usecwd=True)
    if _dotenv_path:
        load_dotenv(_dotenv_path, override=False)
except ImportError:
    _dotenv_path = None

import typer

from .config import load_config
from .errors import ConfigError, HullsenseError, RunAborted, WireError
from .models import ScenarioConfig
from .observability import StructuredLogger, configure_logging, metrics_collector
from .runtime import RunResult, StepRecord, agent_main, coordinate, run_scenario
from .reporting import write_artifacts
from .scenario import boundary_trap_config, build_network, controllability_report, feasibility_witness

app = typer.Typer(help="hullsense: distributed multi-step MPC consensus simulator", no_args_is_help=True)
logger = StructuredLogger(__name__)

EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_RUN = 3

PHI_BOUNDARY = 1e-6
HULL_TOL = 1e-6


@app.callback()
def main(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Overrides HULLSENSE_LOG"),
) -> None:
    configure_logging(log_level)


def _exit_code(err: HullsenseError) -> int:
    if isinstance(err, (RunAborted, WireError)):
        return EXIT_RUN
    return EXIT_CONFIG


def _fail(err: HullsenseError) -> typer.Exit:
    typer.echo(f"[ERROR] {err}", err=True)
    return typer.Exit(code=_exit_code(err))


def _load(config: str, overrides: List[str]) -> ScenarioConfig:
    try:
        return load_config(config, overrides)
    except ConfigError as e:
        raise _fail(e)


def _write_metrics(metrics_out: Optional[str]) -> None:
    if not metrics_out:
        return
    if not metrics_collector.enabled:
        typer.echo("[WARN] metrics disabled; set HULLSENSE_METRICS=true and install prometheus-client")
        return
    Path(metrics_out).write_bytes(metrics_collector.export_metrics())
    typer.echo(f"[OK] Metrics written -> {metrics_out}")


def _finish(result: RunResult, out: str) -> None:
    summary = write_artifacts(out, result)
    h = summary["horizon"]
    formula = f" (formula {h['M_formula']})" if h["M_formula"] is not None else ""
    typer.echo(
        f"[OK] {summary['scenario']}: {summary['steps']} steps, stop={summary['stop_reason']}, "
        f"V {summary['V0']:.6g} -> {summary['V_final']:.6g}, M={h['M_used']}{formula}"
    )
    typer.echo(f"[OK] Artifacts written -> {out}")
    if result.error:
        typer.echo(f"[ERROR] run aborted: {result.error}", err=True)
        raise typer.Exit(code=EXIT_RUN)


@app.command("run")
def cmd_run(
    config: str = typer.Option(..., "--config", "-c", help="Scenario JSON file"),
    out: str = typer.Option("outputs", "--out", "-o", help="Directory for metrics.csv, states.csv, summary.json"),
    override: List[str] = typer.Option([], "--override", help="key=value (dotted path or alias: policy, M, kappa, J_max, delta_lex)"),
    transport: Optional[str] = typer.Option(None, "--transport", help="inprocess or tcp (default from the scenario)"),
    metrics_out: Optional[str] = typer.Option(None, "--metrics-out", help="Write Prometheus exposition text here"),
) -> None:
    """Run a scenario to completion and write its artifacts."""
    cfg = _load(config, override)
    if transport not in (None, "inprocess", "tcp"):
        raise _fail(ConfigError(f"unknown transport {transport!r}", source="--transport"))
    try:
        result = run_scenario(cfg, transport)
    except HullsenseError as e:
        raise _fail(e)
    _write_metrics(metrics_out)
    _finish(result, out)


@app.command("check-horizon")
def cmd_check_horizon(
    config: str = typer.Option(..., "--config", "-c", help="Scenario JSON file"),
    override: List[str] = typer.Option([], "--override", help="key=value overrides"),
) -> None:
    """Compare the configured horizon with the explicit feasibility bound."""
    cfg = _load(config, override)
    if cfg.homogeneous_kind is None:
        raise _fail(ConfigError("horizon bounds need a homogeneous integrator network", source=config, path="/agents"))
    try:
        network = build_network(cfg)
    except HullsenseError as e:
        raise _fail(e)
    h = network.horizon
    typer.echo(f"scenario:      {cfg.name} ({cfg.homogeneous_kind}, {len(network.ids)} agents)")
    typer.echo(f"V(z(0)):       {h.V0:.10g}")
    typer.echo(f"u_min:         {h.u_min:.10g}")
    if h.v_max is not None:
        typer.echo(f"v_max:         {h.v_max:.10g}")
        typer.echo(f"M1, M2:        {h.derivation.get('M1')}, {h.derivation.get('M2')}")
    typer.echo(f"formula M:     {h.M_formula}")
    typer.echo(f"configured M:  {h.M_used} ({h.mode})")
    for row in controllability_report(network):
        rho = "rank deficient" if row["reach_radius"] is None else f"reach radius {row['reach_radius']:.6g}"
        typer.echo(f"agent {row['agent_id']}:       {rho}")
    for row in feasibility_witness(network):
        mark = "ok" if row["ok"] else "FAILED"
        typer.echo(f"witness {row['agent_id']}:     {mark} ({row['detail']})")

    if not h.passes:
        typer.echo(f"[WARN] configured M={h.M_used} is below the bound {h.M_formula}")
    elif h.M_formula is not None and h.M_used != h.M_formula:
        typer.echo(f"[PASS] configured M={h.M_used} >= bound {h.M_formula} (values differ; both reported)")
    else:
        typer.echo(f"[PASS] M={h.M_used}")


def _agent_one(result: RunResult) -> StepRecord:
    for rec in result.records:
        if rec.agent_id == 1 and rec.j == 0:
            return rec
    raise RunAborted("no step record for agent 1", error=result.error)


def _counterexample(policy: str) -> Tuple[StepRecord, List[str]]:
    result = run_scenario(boundary_trap_config(policy), transport="inprocess")
    if result.error:
        raise RunAborted(result.error, policy=policy)
    rec = _agent_one(result)
    problems: List[str] = []
    if policy == "adversarial":
        if not rec.hull_ok:
            problems.append("terminal left the neighbor hull")
        if rec.contraction > rec.contraction_bound + HULL_TOL:
            problems.append(f"contraction {rec.contraction:.6g} exceeds {rec.contraction_bound:.6g}")
        if rec.phi > PHI_BOUNDARY:
            problems.append(f"phi={rec.phi:.3g} is not on the boundary")
    elif not rec.phi > 0.0:
        problems.append(f"phi={rec.phi:.3g} is not strictly interior")
    return rec, problems


@app.command("verify-counterexample")
def cmd_verify_counterexample() -> None:
    """Four agents on a unit square: boundary-seeking plans stall, lexicographic plans do not."""
    failed = False
    for policy in ("adversarial", "lex"):
        try:
            rec, problems = _counterexample(policy)
        except HullsenseError as e:
            raise _fail(e)
        terminal = ", ".join(f"{v:.6g}" for v in rec.terminal)
        typer.echo(
            f"{policy:>11}: terminal=({terminal}) phi={rec.phi:.3g} hull_ok={rec.hull_ok} "
            f"contraction {rec.contraction:.6g} <= {rec.contraction_bound:.6f} (0.9*sqrt(0.5)={0.9 * math.sqrt(0.5):.6f})"
        )
        for p in problems:
            typer.echo(f"[FAIL] {policy}: {p}", err=True)
        failed = failed or bool(problems)
    if failed:
        raise typer.Exit(code=EXIT_VERIFY)
    typer.echo("[OK] boundary plan reaches phi=0 while the lexicographic plan stays interior")


def _split_address(address: str) -> Tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"expected host:port, got {address!r}", source="--coordinator")
    return host or "127.0.0.1", int(port)


@app.command("serve-agent")
def cmd_serve_agent(
    coordinator: str = typer.Option(..., "--coordinator", help="Coordinator address host:port"),
    agent_id: int = typer.Option(..., "--agent-id", min=1, help="1-based agent id"),
) -> None:
    """Run one TCP agent until the coordinator shuts it down."""
    try:
        host, port = _split_address(coordinator)
        asyncio.run(agent_main(host, port, agent_id))
    except HullsenseError as e:
        raise _fail(e)
    typer.echo(f"[OK] agent {agent_id} finished")


@app.command("coordinate")
def cmd_coordinate(
    config: str = typer.Option(..., "--config", "-c", help="Scenario JSON file"),
    port: Optional[int] = typer.Option(None, "--port", help="Listen port (default from the scenario)"),
    host: str = typer.Option("0.0.0.0", "--host", help="Listen address"),
    out: str = typer.Option("outputs", "--out", "-o", help="Artifact directory"),
    override: List[str] = typer.Option([], "--override", help="key=value overrides"),
    metrics_out: Optional[str] = typer.Option(None, "--metrics-out", help="Write Prometheus exposition text here"),
) -> None:
    """TCP coordinator: wait for every agent, run, write artifacts."""
    cfg = _load(config, override)
    try:
        network = build_network(cfg)
        result = asyncio.run(coordinate(network, host=host, port=cfg.transport.port if port is None else port))
    except HullsenseError as e:
        raise _fail(e)
    _write_metrics(metrics_out)
    _finish(result, out)
