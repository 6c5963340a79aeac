from __future__ import annotations
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class AgentModel(BaseModel):
    """Prediction model of one agent"""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["single_integrator", "double_integrator"] = Field(..., description="Agent dynamics")
    dim: int = Field(2, ge=1, description="Consensus dimension d")
    u_max: float = Field(..., gt=0, description="Input bound (ball radius or box half-width)")
    input_set: Literal["ball", "box"] = Field("ball", description="Input set shape")

    @property
    def state_dim(self) -> int:
        return self.dim if self.kind == "single_integrator" else 2 * self.dim


class AgentSpec(AgentModel):
    """Agent entry of a scenario: model plus initial full state"""
    model_config = ConfigDict(extra="forbid")

    x0: List[float] = Field(..., description="Initial full state")
    state_box: Optional[Tuple[List[float], List[float]]] = Field(
        None, description="Optional [lower, upper] state bounds"
    )

    @model_validator(mode="after")
    def validate_state_length(self) -> "AgentSpec":
        if len(self.x0) != self.state_dim:
            raise ValueError(f"x0 has {len(self.x0)} entries, {self.kind} in d={self.dim} needs {self.state_dim}")
        if self.state_box is not None:
            lo, hi = self.state_box
            if len(lo) != self.state_dim or len(hi) != self.state_dim:
                raise ValueError("state_box bounds must match the state dimension")
            if any(l > h for l, h in zip(lo, hi)):
                raise ValueError("state_box lower bound exceeds upper bound")
        return self

    def model_part(self) -> AgentModel:
        return AgentModel(kind=self.kind, dim=self.dim, u_max=self.u_max, input_set=self.input_set)


class GraphConfig(BaseModel):
    """Communication schedule; edge [k, i] makes agent k visible to agent i"""
    model_config = ConfigDict(extra="forbid")

    mode: Literal["static", "periodic", "ring", "complete"] = Field(..., description="Schedule kind")
    edges: Optional[List[Tuple[int, int]]] = Field(None, description="Edges of a static graph")
    slots: Optional[List[List[Tuple[int, int]]]] = Field(None, description="Edge sets of a periodic schedule")
    period: Optional[int] = Field(None, ge=1, description="Number of slots (periodic)")
    window: int = Field(1, ge=1, description="Joint-connectivity window B")

    @model_validator(mode="after")
    def validate_mode_fields(self) -> "GraphConfig":
        if self.mode == "static" and self.edges is None:
            raise ValueError("static graphs need 'edges'")
        if self.mode == "periodic":
            if not self.slots:
                raise ValueError("periodic graphs need non-empty 'slots'")
            if self.period is not None and self.period != len(self.slots):
                raise ValueError(f"period {self.period} does not match {len(self.slots)} slots")
        return self


class HorizonConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal["explicit", "auto_si", "auto_di"] = Field("explicit", description="How M is chosen")
    M: Optional[int] = Field(None, ge=1, description="Horizon for explicit mode")

    @model_validator(mode="after")
    def explicit_needs_m(self) -> "HorizonConfig":
        if self.mode == "explicit" and self.M is None:
            raise ValueError("explicit horizon needs M")
        return self


class WeightsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    Q_diag: Optional[List[float]] = Field(None, description="State weights (consensus dim); default ones")
    R_diag: Optional[List[float]] = Field(None, description="Input-rate weights (input dim); default ones")

    @field_validator("Q_diag", "R_diag")
    @classmethod
    def nonnegative(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is not None and any(w < 0 for w in v):
            raise ValueError("weights must be nonnegative")
        return v


class PolicyConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["plain", "lex", "adversarial"] = Field("lex", description="Plan selection policy")
    delta_lex: float = Field(1e-5, ge=0, allow_inf_nan=False, description="Primary-cost slack of the secondary problem")
    activation: Literal["always", "boundary"] = Field("always", description="When the secondary problem runs")


class SolverConfig(BaseModel):
    """ADMM parameters forwarded to every agent"""
    model_config = ConfigDict(extra="forbid")

    max_iter: int = Field(20000, ge=1)
    eps_abs: float = Field(1e-8, gt=0)
    eps_rel: float = Field(1e-8, ge=0)
    rho: float = Field(1.0, gt=0)
    over_relaxation: float = Field(1.5, gt=0, lt=2)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    J_max: int = Field(60, ge=0, description="Maximum outer steps")
    stop_tol: float = Field(1e-3, ge=0, description="Stop once V drops below this")
    seed: int = Field(0, description="Recorded for reproducibility; the run itself is deterministic")


class TransportConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["inprocess", "tcp"] = Field("inprocess")
    host: str = Field("127.0.0.1")
    port: int = Field(7781, ge=0, le=65535)


class ScenarioConfig(BaseModel):
    """Complete declarative description of a run"""
    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1)
    agents: List[AgentSpec] = Field(..., min_length=2)
    graph: GraphConfig
    horizon: HorizonConfig
    weights: WeightsConfig = Field(default_factory=WeightsConfig)
    kappa: float = Field(0.8, gt=0, lt=1)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    run: RunConfig = Field(default_factory=RunConfig)
    transport: TransportConfig = Field(default_factory=TransportConfig)
    epsilon: float = Field(0.0, ge=0, description="Accepted for completeness; no constraint uses it")

    @model_validator(mode="after")
    def validate_scenario(self) -> "ScenarioConfig":
        kinds = {a.kind for a in self.agents}
        dims = {a.dim for a in self.agents}
        if len(dims) != 1:
            raise ValueError("all agents must share the consensus dimension")
        if self.horizon.mode == "auto_si" and kinds != {"single_integrator"}:
            raise ValueError("auto_si horizon needs an all single-integrator network")
        if self.horizon.mode == "auto_di" and kinds != {"double_integrator"}:
            raise ValueError("auto_di horizon needs an all double-integrator network")
        d = dims.pop()
        if self.weights.Q_diag is not None and len(self.weights.Q_diag) != d:
            raise ValueError(f"Q_diag needs {d} entries")
        if self.weights.R_diag is not None and len(self.weights.R_diag) != d:
            raise ValueError(f"R_diag needs {d} entries")
        ell = len(self.agents)
        edge_lists: List[List[Tuple[int, int]]] = []
        if self.graph.edges is not None:
            edge_lists.append(self.graph.edges)
        edge_lists.extend(self.graph.slots or [])
        for edges in edge_lists:
            for k, i in edges:
                if not (1 <= k <= ell and 1 <= i <= ell) or k == i:
                    raise ValueError(f"invalid edge [{k}, {i}] for {ell} agents")
        return self

    @property
    def consensus_dim(self) -> int:
        return self.agents[0].dim

    @property
    def homogeneous_kind(self) -> Optional[str]:
        kinds = {a.kind for a in self.agents}
        return kinds.pop() if len(kinds) == 1 else None


class MetricsRow(BaseModel):
    """One (outer step, agent) row of metrics.csv"""

    j: int
    agent_id: int
    V: float
    phi: float
    J_star: float
    lex_active: int = Field(..., ge=0, le=1)
    t_primary_ms: float
    t_lex_ms: float
    n_var: int
    n_eq: int
    n_ineq: int
    hull_dim: int
    hull_ok: int = Field(..., ge=0, le=1)
    ri_strict: int = Field(..., ge=0, le=1)


METRICS_COLUMNS: List[str] = list(MetricsRow.model_fields)
TIMING_COLUMNS = ("t_primary_ms", "t_lex_ms")
