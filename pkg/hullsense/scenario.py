"""
Turn a ScenarioConfig into the objects a run needs: agent models, the graph
schedule, initial states, and the horizon actually used.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from . import graph
from .dynamics import (
    LinearAgent,
    double_integrator,
    horizon_di,
    horizon_si,
    reach_radius,
    single_integrator,
    u_min_of,
    warmstart_di,
    warmstart_si,
    simulate,
)
from .errors import ConfigError, DynamicsError
from .geometry import barycenter, diameter
from .models import AgentModel, GraphConfig, ScenarioConfig
from .observability import StructuredLogger
from .protocol import AgentConfig

logger = StructuredLogger(__name__)


@dataclass(frozen=True)
class HorizonReport:
    M_used: int
    M_formula: Optional[int]
    mode: str
    V0: float
    u_min: float
    v_max: Optional[float]
    derivation: Dict[str, Any] = field(default_factory=dict)

    @property
    def passes(self) -> bool:
        return self.M_formula is None or self.M_used >= self.M_formula


@dataclass(frozen=True, eq=False)
class Network:
    config: ScenarioConfig
    agents: Dict[int, LinearAgent]
    x0: Dict[int, np.ndarray]
    schedule: graph.GraphSchedule
    horizon: HorizonReport

    @property
    def ids(self) -> List[int]:
        return sorted(self.agents)

    @property
    def M(self) -> int:
        return self.horizon.M_used

    def agent_config(self, agent_id: int) -> AgentConfig:
        cfg = self.config
        spec = cfg.agents[agent_id - 1]
        d = cfg.consensus_dim
        return AgentConfig(
            agent_id=agent_id,
            model=spec.model_part(),
            M=self.M,
            Q_diag=cfg.weights.Q_diag or [1.0] * d,
            R_diag=cfg.weights.R_diag or [1.0] * d,
            kappa=cfg.kappa,
            policy=cfg.policy,
            solver=cfg.solver,
            state_box=spec.state_box,
        )


def build_agent(spec: AgentModel) -> LinearAgent:
    box = spec.input_set == "box"
    if spec.kind == "single_integrator":
        return single_integrator(spec.dim, spec.u_max, box=box)
    return double_integrator(spec.dim, spec.u_max, box=box)


def build_schedule(cfg: GraphConfig, node_count: int) -> graph.GraphSchedule:
    if cfg.mode == "ring":
        return graph.ring(node_count)
    if cfg.mode == "complete":
        return graph.complete(node_count)
    if cfg.mode == "static":
        return graph.static(node_count, cfg.edges or [])
    return graph.periodic(node_count, cfg.slots or [])


def horizon_report(config: ScenarioConfig, agents: Dict[int, LinearAgent]) -> HorizonReport:
    ids = sorted(agents)
    positions = np.vstack([agents[i].proj @ np.asarray(config.agents[i - 1].x0) for i in ids])
    V0 = diameter(positions)
    u_min = u_min_of([agents[i] for i in ids])
    kind = config.homogeneous_kind
    d = config.consensus_dim

    formula = None
    v_max: Optional[float] = None
    derivation: Dict[str, Any] = {}
    if kind == "single_integrator":
        bound = horizon_si(V0, u_min)
        formula, derivation = bound.M, bound.derivation
    elif kind == "double_integrator":
        v_max = max(float(np.linalg.norm(np.asarray(a.x0)[d:])) for a in config.agents)
        bound = horizon_di(V0, v_max, u_min)
        formula, derivation = bound.M, bound.derivation

    if config.horizon.mode == "explicit":
        M_used = int(config.horizon.M)  # validated non-None for explicit mode
    elif formula is None:
        raise ConfigError("automatic horizon needs a homogeneous integrator network", path="/horizon/mode")
    else:
        M_used = formula
    return HorizonReport(
        M_used=M_used, M_formula=formula, mode=config.horizon.mode, V0=V0, u_min=u_min, v_max=v_max, derivation=derivation
    )


def build_network(config: ScenarioConfig) -> Network:
    agents = {i: build_agent(spec) for i, spec in enumerate(config.agents, start=1)}
    x0 = {i: np.asarray(spec.x0, dtype=float) for i, spec in enumerate(config.agents, start=1)}
    schedule = build_schedule(config.graph, len(agents))
    horizon = horizon_report(config, agents)

    if not graph.check_joint_connectivity(schedule, config.graph.window, config.run.J_max):
        logger.warning("Graph schedule is not jointly connected", window=config.graph.window, scenario=config.name)
    if config.epsilon:
        logger.info("epsilon is accepted but no constraint uses it", epsilon=config.epsilon)
    if not horizon.passes:
        logger.warning("Configured horizon is below the explicit bound", M=horizon.M_used, formula=horizon.M_formula)
    return Network(config=config, agents=agents, x0=x0, schedule=schedule, horizon=horizon)


# ============================================================================
# Horizon diagnostics
# ============================================================================

def controllability_report(network: Network) -> List[Dict[str, Any]]:
    """Per-agent rank condition and reach radius at the horizon in use."""
    rows = []
    for i in network.ids:
        try:
            rho: Optional[float] = reach_radius(network.agents[i], network.M)
            ok = True
        except DynamicsError:
            rho, ok = None, False
        rows.append({"agent_id": i, "rank_ok": ok, "reach_radius": rho})
    return rows


def feasibility_witness(network: Network) -> List[Dict[str, Any]]:
    """
    Check, for every agent at j=0, that the constructive steering sequence
    reaches its local barycenter within M steps using admissible inputs.
    """
    rows = []
    samples = {i: network.agents[i].proj @ network.x0[i] for i in network.ids}
    for i in network.ids:
        agent = network.agents[i]
        group = [i] + sorted(graph.neighbors(network.schedule, i, 0))
        target = barycenter([samples[k] for k in group])
        try:
            if agent.kind == "single_integrator":
                u_seq = warmstart_si(agent, network.x0[i], target, network.M)
            elif agent.kind == "double_integrator":
                u_seq = warmstart_di(agent, network.x0[i], target, network.M)
            else:
                rows.append({"agent_id": i, "ok": False, "detail": "no constructive witness for this model"})
                continue
        except DynamicsError as e:
            rows.append({"agent_id": i, "ok": False, "detail": e.detail})
            continue
        xs = simulate(agent, network.x0[i], u_seq)
        miss = float(np.linalg.norm(agent.proj @ xs[-1] - target))
        admissible = all(agent.input_set.contains(u) for u in u_seq)
        rows.append({"agent_id": i, "ok": bool(miss <= 1e-9 and admissible), "detail": f"terminal miss {miss:.3g}"})
    return rows


# ============================================================================
# Built-in scenarios
# ============================================================================

def boundary_trap_config(policy: str = "adversarial") -> ScenarioConfig:
    """Four single integrators on the unit square, complete graph, box inputs, M=1."""
    corners = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]
    return ScenarioConfig.model_validate(
        {
            "name": f"boundary_trap_{policy}",
            "agents": [
                {"kind": "single_integrator", "dim": 2, "u_max": 1.0, "input_set": "box", "x0": c} for c in corners
            ],
            "graph": {"mode": "complete"},
            "horizon": {"mode": "explicit", "M": 1},
            "weights": {"Q_diag": [1.0, 1.0], "R_diag": [1.0, 1.0]},
            "kappa": 0.9,
            "policy": {"kind": policy, "delta_lex": 1e-5},
            "run": {"J_max": 1, "stop_tol": 0.0},
        }
    )
