"""
Run artifacts: metrics.csv, states.csv and summary.json.

Floats are written with repr so the CSV files parse back to the exact values.
"""
from __future__ import annotations
import csv
import json
from pathlib import Path
from statistics import fmean
from typing import Any, Dict, Iterable, List, Union

import numpy as np

from .config import config_sha256
from .models import METRICS_COLUMNS, MetricsRow
from .runtime import RunResult, StateRow, StepRecord
from .utils import utc_now_iso

PROBLEM_SIZE_NOTE = (
    "Problem sizes and solve times depend on this implementation's conic encoding "
    "and on the host; they are reported for information only."
)


def metrics_row(rec: StepRecord) -> MetricsRow:
    n_var, n_eq, n_ineq = rec.problem_size
    return MetricsRow(
        j=rec.j,
        agent_id=rec.agent_id,
        V=rec.V,
        phi=rec.phi,
        J_star=rec.J_star,
        lex_active=int(rec.lex_active),
        t_primary_ms=rec.t_primary_ms,
        t_lex_ms=rec.t_lex_ms,
        n_var=n_var,
        n_eq=n_eq,
        n_ineq=n_ineq,
        hull_dim=rec.hull_dim,
        hull_ok=int(rec.hull_ok),
        ri_strict=int(rec.ri_strict),
    )


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path: Union[str, Path], records: Iterable[StepRecord]) -> int:
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for rec in records:
            writer.writerow({k: _cell(v) for k, v in metrics_row(rec).model_dump().items()})
            count += 1
    return count


def read_metrics_csv(path: Union[str, Path]) -> List[MetricsRow]:
    with open(path, newline="", encoding="utf-8") as f:
        return [MetricsRow.model_validate(row) for row in csv.DictReader(f)]


def write_states_csv(path: Union[str, Path], rows: List[StateRow]) -> int:
    n = max((len(r.x) for r in rows), default=0)
    m = max((len(r.u) for r in rows if r.u is not None), default=0)
    fields = ["t", "agent_id"] + [f"x{k}" for k in range(n)] + [f"u{k}" for k in range(m)]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for r in sorted(rows, key=lambda r: (r.t, r.agent_id)):
            row: Dict[str, str] = {"t": str(r.t), "agent_id": str(r.agent_id)}
            row.update({f"x{k}": repr(float(v)) for k, v in enumerate(r.x)})
            row.update({f"u{k}": repr(float(v)) for k, v in enumerate(r.u or ())})
            writer.writerow(row)
    return len(rows)


def timing_stats(records: Iterable[StepRecord]) -> Dict[str, Dict[str, float]]:
    by_agent: Dict[int, List[StepRecord]] = {}
    for rec in records:
        by_agent.setdefault(rec.agent_id, []).append(rec)
    out: Dict[str, Dict[str, float]] = {}
    for agent_id in sorted(by_agent):
        recs = by_agent[agent_id]
        prim = [r.t_primary_ms for r in recs]
        lex = [r.t_lex_ms for r in recs]
        out[str(agent_id)] = {
            "t_primary_ms_mean": fmean(prim),
            "t_primary_ms_max": max(prim),
            "t_lex_ms_mean": fmean(lex),
            "t_lex_ms_max": max(lex),
        }
    return out


def build_summary(result: RunResult) -> Dict[str, Any]:
    net = result.network
    cfg = net.config
    state = result.state
    d = cfg.consensus_dim
    records = result.records

    summary: Dict[str, Any] = {
        "scenario": cfg.name,
        "config_sha256": config_sha256(cfg),
        "generated_at": utc_now_iso(),
        "transport": result.transport,
        "agents": len(net.ids),
        "model": cfg.homogeneous_kind or "mixed",
        "policy": cfg.policy.kind,
        "horizon": {
            "mode": net.horizon.mode,
            "M_used": net.horizon.M_used,
            "M_formula": net.horizon.M_formula,
            "passes": net.horizon.passes,
        },
        "steps": state.j,
        "stop_reason": state.stop_reason,
        "V0": state.V_history[0],
        "V_final": state.V,
        "timings": timing_stats(records),
        "problem_size": {
            str(r.agent_id): list(r.problem_size) for r in records
        },
        "lex_activations": {
            str(i): sum(1 for r in records if r.agent_id == i and r.lex_active) for i in net.ids
        },
        "violations": dict(sorted(state.violations.items())),
        "note": PROBLEM_SIZE_NOTE,
    }
    if any(net.agents[i].kind == "double_integrator" for i in net.ids):
        summary["max_velocity_final"] = max(
            float(np.linalg.norm(state.true_states[i][d:]))
            for i in net.ids
            if net.agents[i].kind == "double_integrator"
        )
    if result.error:
        summary["error"] = result.error
    return summary


def write_artifacts(out_dir: Union[str, Path], result: RunResult) -> Dict[str, Any]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", result.records)
    write_states_csv(out / "states.csv", result.rows)
    summary = build_summary(result)
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8"
    )
    return summary
