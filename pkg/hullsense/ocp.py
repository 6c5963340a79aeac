"""
Local OCP of one agent and its selection policies.

The primary problem steers the agent over M steps so that its terminal
consensus point lies in the neighbor hull and contracts toward the local
barycenter, at minimal tracking + input-rate cost. The lexicographic stage
re-solves among near-optimal plans for the terminal point farthest from the
hull's relative boundary.

Costs are encoded as the Euclidean norm of the stacked weighted residual
vector w, so J = J0 + ||w||^2 where J0 is the constant k=0 state term.
"""
from __future__ import annotations
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np

from .conic import Affine, ConicProgram, ConicSolution, ConicSolver, ProgramBuilder, SolverSettings, SolveStatus, WarmStart
from .dynamics import BallInput, BoxInput, LinearAgent, simulate
from .errors import OcpError, OcpSolveError
from .geometry import Hull2, contains, dist_to_relative_boundary
from .observability import StructuredLogger, log_solve_metrics

logger = StructuredLogger(__name__)

# accuracy the OCP layer asks from the conic solver
OCP_SOLVER_SETTINGS = SolverSettings(eps_abs=1e-8, eps_rel=1e-8)

LEX_IMPROVEMENT = 1e-9
LINE_SLACK = 1e-9
ZBAR_TOL = 1e-7
SCALE_FLOOR = 1e-12

# slack of the segment search toward a secondary plan (original units)
BLEND_TOL = 5e-7
OFF_LINE_TOL = 5e-8
BLEND_BISECTIONS = 40


@dataclass(frozen=True, eq=False)
class OcpSpec:
    agent: LinearAgent
    M: int
    Q: np.ndarray
    R: np.ndarray
    kappa: float
    hull: Hull2
    zbar: np.ndarray
    x0: np.ndarray
    u_prev: Optional[np.ndarray] = None
    target_velocity_zero: bool = False
    state_box: Optional[Tuple[np.ndarray, np.ndarray]] = None
    agent_id: Optional[int] = None
    step: Optional[int] = None

    def __post_init__(self) -> None:
        if not isinstance(self.agent, LinearAgent):
            raise OcpError("OCP compilation needs a linear agent model", agent_id=self.agent_id)
        a = self.agent
        for name, value in (("Q", self.Q), ("R", self.R), ("zbar", self.zbar), ("x0", self.x0)):
            object.__setattr__(self, name, np.asarray(value, dtype=float))
        u_prev = np.zeros(a.input_dim) if self.u_prev is None else np.asarray(self.u_prev, dtype=float)
        object.__setattr__(self, "u_prev", u_prev)

        if self.M < 1:
            raise OcpError(f"horizon must be >= 1, got {self.M}")
        if not 0.0 < self.kappa < 1.0:
            raise OcpError(f"kappa must lie in (0,1), got {self.kappa}")
        if self.Q.shape != (a.consensus_dim,) or np.any(self.Q < 0):
            raise OcpError(f"Q must be {a.consensus_dim} nonnegative weights")
        if self.R.shape != (a.input_dim,) or np.any(self.R < 0):
            raise OcpError(f"R must be {a.input_dim} nonnegative weights")
        if self.x0.shape != (a.state_dim,) or u_prev.shape != (a.input_dim,):
            raise OcpError("x0 / u_prev dimensions do not match the agent")
        if self.target_velocity_zero and a.state_dim != 2 * a.consensus_dim:
            raise OcpError("velocity target needs a (position, velocity) state")
        if len(self.hull) == 0:
            raise OcpError("empty hull")
        if not contains(self.hull, self.zbar, ZBAR_TOL):
            raise OcpError("barycenter lies outside the hull", agent_id=self.agent_id, step=self.step)


@dataclass(frozen=True)
class SelectionPolicy:
    kind: Literal["plain", "lex", "adversarial"] = "lex"
    delta_lex: float = 1e-5
    activation: Literal["always", "boundary"] = "always"
    phi_activation: float = 1e-6

    def __post_init__(self) -> None:
        if not (math.isfinite(self.delta_lex) and self.delta_lex >= 0):
            raise OcpError(f"delta_lex must be finite and >= 0, got {self.delta_lex}")


@dataclass
class PlanResult:
    u_seq: np.ndarray
    x_seq: np.ndarray
    terminal: np.ndarray
    J_star: float
    J: float
    phi: float
    lex_active: bool
    stage: str
    status_primary: str
    status_lex: Optional[str]
    t_primary_ms: float
    t_lex_ms: float
    problem_size: Tuple[int, int, int]
    hull_dim: int
    iterations: dict = field(default_factory=dict)


# ============================================================================
# Compilation
# ============================================================================

def _stage_map(spec: OcpSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(S, target, weights) with stage error S x(k) - target"""
    a = spec.agent
    if spec.target_velocity_zero:
        d = a.consensus_dim
        return np.eye(a.state_dim), np.concatenate([spec.zbar, np.zeros(d)]), np.concatenate([spec.Q, spec.Q])
    return a.proj, spec.zbar, spec.Q


def constant_cost(spec: OcpSpec) -> float:
    S, target, w = _stage_map(spec)
    e = S @ spec.x0 - target
    return float(np.sum(w * e * e))


def plan_cost(spec: OcpSpec, u_seq: np.ndarray) -> float:
    """Primary cost of an input sequence, evaluated by simulation."""
    S, target, w = _stage_map(spec)
    xs = simulate(spec.agent, spec.x0, u_seq)
    u = np.atleast_2d(u_seq)
    states = S @ xs[: spec.M].T - target[:, None]
    du = np.diff(np.vstack([spec.u_prev, u]), axis=0)
    return float(np.sum(w[:, None] * states**2) + np.sum(spec.R * du**2))


class _Layout:
    """Variables of the primary problem and accessors for their blocks."""

    def __init__(self, spec: OcpSpec, builder: ProgramBuilder):
        a = spec.agent
        self.spec = spec
        self.b = builder
        self.n, self.m = a.state_dim, a.input_dim
        builder.add_variable("u", spec.M * self.m)
        builder.add_variable("x", spec.M * self.n)
        builder.add_variable("lam", len(spec.hull))

    def u(self, k: int) -> Affine:
        return self.b.variable("u", k * self.m, self.m)

    def x(self, k: int) -> Affine:
        if k == 0:
            return Affine.constant(self.spec.x0)
        return self.b.variable("x", (k - 1) * self.n, self.n)

    def terminal(self) -> Affine:
        return self.spec.agent.proj @ self.x(self.spec.M)


def _residual_expr(lay: _Layout) -> Affine:
    spec = lay.spec
    S, target, w = _stage_map(spec)
    sq_w = np.diag(np.sqrt(w))
    sq_r = np.diag(np.sqrt(spec.R))
    parts: List[Affine] = [sq_w @ (S @ lay.x(k) - target) for k in range(1, spec.M)]
    prev = Affine.constant(spec.u_prev)
    for k in range(spec.M):
        parts.append(sq_r @ (lay.u(k) - prev))
        prev = lay.u(k)
    return Affine.vstack(parts)


def _base_program(spec: OcpSpec, with_cost: bool = True) -> _Layout:
    a = spec.agent
    builder = ProgramBuilder()
    lay = _Layout(spec, builder)
    if with_cost:
        builder.add_variable("s", 1)

    for k in range(spec.M):
        builder.add_cone("zero", lay.x(k + 1) - a.A @ lay.x(k) - a.B @ lay.u(k))

    for k in range(spec.M):
        if isinstance(a.input_set, BallInput):
            builder.add_cone("soc", Affine.vstack([Affine.constant([a.input_set.radius]), lay.u(k)]))
        else:
            builder.add_cone(
                "nonneg",
                Affine.vstack([a.input_set.upper - lay.u(k), lay.u(k) - a.input_set.lower]),
            )

    if spec.state_box is not None:
        lo, hi = (np.asarray(v, dtype=float) for v in spec.state_box)
        for k in range(1, spec.M + 1):
            builder.add_cone("nonneg", Affine.vstack([hi - lay.x(k), lay.x(k) - lo]))

    # terminal point as a convex combination of hull vertices
    lam = builder.variable("lam")
    V = spec.hull.vertices
    builder.add_cone("zero", lay.terminal() - V.T @ lam)
    builder.add_cone("zero", np.ones((1, len(V))) @ lam - 1.0)
    builder.add_cone("nonneg", lam)

    radius = spec.kappa * float(np.linalg.norm(a.proj @ spec.x0 - spec.zbar))
    if radius <= 1e-12:
        builder.add_cone("zero", lay.terminal() - spec.zbar)
    else:
        builder.add_cone("soc", Affine.vstack([Affine.constant([radius]), lay.terminal() - spec.zbar]))

    if with_cost:
        builder.add_cone("soc", Affine.vstack([builder.variable("s"), _residual_expr(lay)]))
    return lay


def compile_primary(spec: OcpSpec) -> ConicProgram:
    lay = _base_program(spec)
    return lay.b.build({"s": [1.0]})


def compile_lex(spec: OcpSpec, J_star: float, delta_lex: float) -> ConicProgram:
    """Maximize the margin t of the terminal point to the hull's relative boundary."""
    hull = spec.hull
    if hull.dim == 0:
        raise OcpError("singleton hull has no relative boundary; skip the secondary problem")
    lay = _base_program(spec)
    b = lay.b
    t = b.add_variable("t", 1)
    p = lay.terminal()

    if math.isfinite(delta_lex):
        cap = math.sqrt(max(J_star + delta_lex - constant_cost(spec), 0.0))
        b.add_cone("nonneg", Affine.constant([cap]) - b.variable("s"))

    if hull.dim == 2:
        ones = np.ones((len(hull.offsets), 1))
        b.add_cone("nonneg", hull.normals @ p - hull.offsets - ones @ t)
    else:
        a0 = hull.vertices[0]
        normal = hull.normals[0].reshape(1, 2)
        along = hull.direction.reshape(1, 2)
        offset_line = normal @ (p - a0)
        b.add_cone("nonneg", Affine.vstack([LINE_SLACK - offset_line, offset_line + LINE_SLACK]))
        s_along = along @ (p - a0)
        b.add_cone("nonneg", Affine.vstack([s_along - t, (hull.length - s_along) - t]))
    return b.build({"t": [-1.0]})


def compile_boundary(spec: OcpSpec, facet: int) -> ConicProgram:
    """Primary constraints with the terminal pinned to one hull facet, closest to the barycenter."""
    hull = spec.hull
    lay = _base_program(spec, with_cost=False)
    b = lay.b
    e = b.add_variable("e", 1)
    p = lay.terminal()
    if hull.dim == 2:
        b.add_cone("zero", hull.normals[facet].reshape(1, 2) @ p - hull.offsets[facet])
    elif hull.dim == 1:
        b.add_cone("zero", p - hull.vertices[facet])
    else:
        raise OcpError("singleton hull has no facets")
    b.add_cone("soc", Affine.vstack([e, p - spec.zbar]))
    return b.build({"e": [1.0]})


# ============================================================================
# Normalization
# ============================================================================

def normalize(spec: OcpSpec) -> Tuple[OcpSpec, float]:
    """
    Equivalent spec in shifted, rescaled coordinates, plus the length scale L.

    States move so the barycenter sits at the origin (when the shift is an
    equilibrium of the model) and everything is divided by the spread of the
    local data, so x = shift + L x', u = L u' and costs scale by L^2. The
    solver then sees an O(1) problem however close the agents are.
    """
    a = spec.agent
    shift = a.proj.T @ spec.zbar
    if not (np.allclose(a.A @ shift, shift, atol=1e-12) and np.allclose(a.proj @ shift, spec.zbar, atol=1e-12)):
        shift = np.zeros(a.state_dim)
    cz = a.proj @ shift
    hull = spec.hull
    L = max(float(np.max(np.abs(spec.x0 - shift))), float(np.max(np.abs(hull.vertices - cz))))
    if not L > SCALE_FLOOR:
        L = 1.0

    s = a.input_set
    input_set = BallInput(radius=s.radius / L) if isinstance(s, BallInput) else BoxInput(lower=s.lower / L, upper=s.upper / L)
    scaled_hull = Hull2(
        vertices=(hull.vertices - cz) / L,
        dim=hull.dim,
        normals=hull.normals,
        offsets=(hull.offsets - hull.normals @ cz) / L,
    )
    box = None
    if spec.state_box is not None:
        lo, hi = spec.state_box
        box = ((np.asarray(lo, dtype=float) - shift) / L, (np.asarray(hi, dtype=float) - shift) / L)
    scaled = replace(
        spec,
        agent=LinearAgent(A=a.A, B=a.B, input_set=input_set, proj=a.proj, kind=a.kind),
        hull=scaled_hull,
        zbar=(spec.zbar - cz) / L,
        x0=(spec.x0 - shift) / L,
        u_prev=spec.u_prev / L,
        state_box=box,
    )
    return scaled, L


# ============================================================================
# Solving
# ============================================================================

def _solve_stage(
    solver: ConicSolver,
    prog: ConicProgram,
    spec: OcpSpec,
    stage: str,
    x0: Optional[np.ndarray] = None,
    warm: Optional[WarmStart] = None,
) -> Tuple[ConicSolution, float]:
    start = time.perf_counter()
    sol = solver.solve(prog, x0=x0, warm=warm)
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    failed = sol.status is not SolveStatus.OPTIMAL
    log_solve_metrics(
        stage=stage,
        status=sol.status.value,
        duration_ms=elapsed_ms,
        iterations=sol.iterations,
        agent_id=spec.agent_id,
        step=spec.step,
        error=f"primal={sol.primal_residual:.3g} dual={sol.dual_residual:.3g}" if failed else None,
    )
    return sol, elapsed_ms


def _admissible(spec: OcpSpec, u_seq: np.ndarray) -> np.ndarray:
    """Project solver inputs onto the input set (removes solver-tolerance overshoot)."""
    s = spec.agent.input_set
    if isinstance(s, BallInput):
        norms = np.linalg.norm(u_seq, axis=1, keepdims=True)
        return np.where(norms > s.radius, u_seq * (s.radius / np.maximum(norms, 1e-300)), u_seq)
    return np.clip(u_seq, s.lower, s.upper)


def _inputs(spec: OcpSpec, prog: ConicProgram, y: np.ndarray, scale: float) -> np.ndarray:
    """Admissible input sequence in original units from a normalized solver iterate."""
    return _admissible(spec, scale * prog.value(y, "u").reshape(spec.M, spec.agent.input_dim))


def _rollout(spec: OcpSpec, u_seq: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float, float]:
    a = spec.agent
    x_seq = simulate(a, spec.x0, u_seq)
    terminal = a.proj @ x_seq[-1]
    return u_seq, x_seq, terminal, plan_cost(spec, u_seq), dist_to_relative_boundary(spec.hull, terminal)


def _contraction_radius(spec: OcpSpec) -> float:
    return spec.kappa * float(np.linalg.norm(spec.agent.proj @ spec.x0 - spec.zbar))


def _solver_for(solver: Optional[ConicSolver]) -> ConicSolver:
    return solver if solver is not None else ConicSolver(OCP_SOLVER_SETTINGS)


def solve_primary(
    spec: OcpSpec,
    solver: Optional[ConicSolver] = None,
    warm: Optional[Dict[str, WarmStart]] = None,
) -> Tuple[PlanResult, np.ndarray]:
    """
    Primary plan plus the raw solver iterate in normalized coordinates
    (used to seed later stages). ``warm`` carries solver state between
    calls and is updated in place.
    """
    solver = _solver_for(solver)
    nspec, scale = normalize(spec)
    prog = compile_primary(nspec)
    sol, ms = _solve_stage(solver, prog, spec, "primary", warm=(warm or {}).get("primary"))
    if sol.status is not SolveStatus.OPTIMAL:
        raise OcpSolveError(
            f"primary OCP not solved: {sol.status.value}",
            status=sol.status.value,
            stage="primary",
            iterations=sol.iterations,
            agent_id=spec.agent_id,
            step=spec.step,
        )
    if warm is not None:
        warm["primary"] = sol.warm_start()
    u_seq, x_seq, terminal, J, phi = _rollout(spec, _inputs(spec, prog, sol.y, scale))
    plan = PlanResult(
        u_seq=u_seq,
        x_seq=x_seq,
        terminal=terminal,
        J_star=J,
        J=J,
        phi=phi,
        lex_active=False,
        stage="primary",
        status_primary=sol.status.value,
        status_lex=None,
        t_primary_ms=ms,
        t_lex_ms=0.0,
        problem_size=prog.problem_size,
        hull_dim=spec.hull.dim,
        iterations={"primary": sol.iterations},
    )
    return plan, sol.y


def _lex_constraints(spec: OcpSpec, u_seq: np.ndarray, cost_cap: float) -> np.ndarray:
    """Constraint values of the secondary problem at a plan; <= 0 means satisfied. The cost comes last."""
    xs = simulate(spec.agent, spec.x0, u_seq)
    p = spec.agent.proj @ xs[-1]
    hull = spec.hull
    if hull.dim == 2:
        parts = [hull.offsets - hull.normals @ p]
    else:
        a0 = hull.vertices[0]
        along = float(hull.direction @ (p - a0))
        parts = [np.array([abs(float(hull.normals[0] @ (p - a0))), -along, along - hull.length])]
    parts.append(np.array([float(np.linalg.norm(p - spec.zbar)) - _contraction_radius(spec)]))
    if spec.state_box is not None:
        lo, hi = spec.state_box
        parts.append((xs[1:] - hi).ravel())
        parts.append((lo - xs[1:]).ravel())
    parts.append(np.array([plan_cost(spec, u_seq) - cost_cap]))
    return np.concatenate(parts)


def _toward(
    spec: OcpSpec, base: np.ndarray, target: np.ndarray, cost_cap: float, scale: float
) -> Optional[np.ndarray]:
    """
    Farthest point on the segment from ``base`` to ``target`` that keeps every
    secondary constraint no worse than at ``base`` up to solver-level slack,
    with the cost cap enforced exactly; None when only ``base`` qualifies.

    Input sets are convex, so both ends being admissible keeps the whole
    segment admissible; every other constraint is convex along the segment,
    so the admissible part is an interval starting at ``base``.
    """
    g0 = _lex_constraints(spec, base, cost_cap)
    slack = np.full(g0.shape, BLEND_TOL * min(1.0, scale))
    if spec.hull.dim == 1:
        slack[0] = min(slack[0], OFF_LINE_TOL)
    slack[-1] = 0.0
    limit = np.maximum(g0, 0.0) + slack
    step = target - base

    def ok(theta: float) -> bool:
        return bool(np.all(_lex_constraints(spec, base + theta * step, cost_cap) <= limit))

    if ok(1.0):
        return target
    lo, hi = 0.0, 1.0
    for _ in range(BLEND_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return base + lo * step if lo > 0.0 else None


def _lex_candidate(
    spec: OcpSpec, primary: PlanResult, prog: ConicProgram, sol: ConicSolution, scale: float, cost_cap: float
) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray, float, float]]:
    if sol.status is SolveStatus.INFEASIBLE_SUSPECT or not np.all(np.isfinite(sol.y)):
        return None
    u_seq = _toward(spec, primary.u_seq, _inputs(spec, prog, sol.y, scale), cost_cap, scale)
    if u_seq is None:
        return None
    rolled = _rollout(spec, u_seq)
    if rolled[4] < primary.phi + LEX_IMPROVEMENT:
        return None
    return rolled


def _lex_stage(
    spec: OcpSpec,
    policy: SelectionPolicy,
    solver: ConicSolver,
    primary: PlanResult,
    y0: np.ndarray,
    warm: Dict[str, WarmStart],
) -> PlanResult:
    nspec, scale = normalize(spec)
    cost_cap = primary.J_star + policy.delta_lex
    prog = compile_lex(nspec, primary.J_star / scale**2, policy.delta_lex / scale**2)
    seed = np.concatenate([y0, [0.0]])
    prev = warm.get("lex")
    start = WarmStart(
        y=seed,
        dual=prev.dual if prev is not None and prev.dual.shape == prog.b.shape else np.zeros(prog.b.shape[0]),
        rho=prev.rho if prev is not None else solver.settings.rho,
    )
    sol, ms = _solve_stage(solver, prog, spec, "lex", warm=start)
    total_ms = ms
    iterations = sol.iterations
    if sol.status is SolveStatus.OPTIMAL:
        warm["lex"] = sol.warm_start()
    candidate = _lex_candidate(spec, primary, prog, sol, scale, cost_cap)
    status = sol.status

    if candidate is None and sol.status is not SolveStatus.OPTIMAL:
        # the margin problem without the cost cap is well conditioned; the
        # segment search toward its plan enforces the cap exactly
        logger.info(
            "Capped secondary problem not solved; following the uncapped margin plan",
            agent_id=spec.agent_id,
            j=spec.step,
            status=sol.status.value,
        )
        margin_prog = compile_lex(nspec, primary.J_star / scale**2, math.inf)
        margin_sol, ms = _solve_stage(solver, margin_prog, spec, "lex_margin", x0=seed)
        total_ms += ms
        iterations += margin_sol.iterations
        candidate = _lex_candidate(spec, primary, margin_prog, margin_sol, scale, cost_cap)
        status = margin_sol.status

    primary.t_lex_ms = total_ms
    primary.status_lex = status.value
    primary.iterations["lex"] = iterations
    if candidate is None:
        if status is not SolveStatus.OPTIMAL:
            logger.warning("Secondary problem failed; keeping primary plan", agent_id=spec.agent_id, j=spec.step, status=status.value)
        return primary

    u_seq, x_seq, terminal, J, phi = candidate
    return PlanResult(
        u_seq=u_seq,
        x_seq=x_seq,
        terminal=terminal,
        J_star=primary.J_star,
        J=J,
        phi=phi,
        lex_active=True,
        stage="lex",
        status_primary=primary.status_primary,
        status_lex=status.value,
        t_primary_ms=primary.t_primary_ms,
        t_lex_ms=total_ms,
        problem_size=primary.problem_size,
        hull_dim=primary.hull_dim,
        iterations=dict(primary.iterations),
    )


def _boundary_stage(spec: OcpSpec, solver: ConicSolver, primary: PlanResult) -> PlanResult:
    """Among hull facets, the reachable boundary point closest to the barycenter."""
    hull = spec.hull
    nspec, scale = normalize(spec)
    radius = _contraction_radius(spec)
    best: Optional[Tuple[float, PlanResult]] = None
    total_ms = 0.0
    iterations = 0
    for facet in range(len(hull.offsets) if hull.dim == 2 else 2):
        # facets outside the contraction ball cannot hold a feasible terminal
        if hull.dim == 2:
            v, w = hull.vertices[facet], hull.vertices[(facet + 1) % len(hull)]
            seg = w - v
            s = float(np.clip((spec.zbar - v) @ seg / (seg @ seg), 0.0, 1.0))
            reach = float(np.linalg.norm(v + s * seg - spec.zbar))
        else:
            reach = float(np.linalg.norm(hull.vertices[facet] - spec.zbar))
        if reach > radius + 1e-9:
            continue
        prog = compile_boundary(nspec, facet)
        sol, ms = _solve_stage(solver, prog, spec, "adversarial")
        total_ms += ms
        iterations += sol.iterations
        if sol.status is not SolveStatus.OPTIMAL:
            continue
        u_seq, x_seq, terminal, J, phi = _rollout(spec, _inputs(spec, prog, sol.y, scale))
        value = float(np.linalg.norm(terminal - spec.zbar))
        if best is None or value < best[0] - 1e-9:
            best = (
                value,
                PlanResult(
                    u_seq=u_seq,
                    x_seq=x_seq,
                    terminal=terminal,
                    J_star=primary.J_star,
                    J=J,
                    phi=phi,
                    lex_active=False,
                    stage="adversarial",
                    status_primary=primary.status_primary,
                    status_lex=sol.status.value,
                    t_primary_ms=primary.t_primary_ms,
                    t_lex_ms=0.0,
                    problem_size=primary.problem_size,
                    hull_dim=primary.hull_dim,
                ),
            )
    if best is None:
        logger.warning("No boundary plan found; keeping primary plan", agent_id=spec.agent_id, j=spec.step)
        return primary
    plan = best[1]
    plan.t_lex_ms = total_ms
    plan.iterations = {**primary.iterations, "adversarial": iterations}
    return plan


def select_plan(
    spec: OcpSpec,
    policy: SelectionPolicy,
    solver: Optional[ConicSolver] = None,
    warm: Optional[Dict[str, WarmStart]] = None,
) -> PlanResult:
    """Plan under ``policy``; ``warm`` is per-agent solver state kept across outer steps."""
    solver = _solver_for(solver)
    warm = {} if warm is None else warm
    primary, y0 = solve_primary(spec, solver, warm)
    if policy.kind == "plain" or spec.hull.dim == 0:
        return primary
    if policy.kind == "adversarial":
        return _boundary_stage(spec, solver, primary)
    if policy.activation == "boundary" and primary.phi > policy.phi_activation:
        return primary
    return _lex_stage(spec, policy, solver, primary, y0, warm)
