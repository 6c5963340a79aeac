"""
Outer-loop orchestration.

Agents are pure planners: each receives its own full state plus the consensus
samples of its in-neighbors, builds the local hull and barycenter, and replies
with an open-loop input sequence. The coordinator routes samples, waits for
every reply, then propagates the true plants through the M inner steps.

The same state machines run over in-memory pipes (in-process mode) or TCP
streams; message bytes are identical in both.
"""
from __future__ import annotations
import asyncio
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Awaitable, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from . import graph
from .conic import ConicSolver, SolverSettings, WarmStart
from .dynamics import LinearAgent, simulate
from .errors import AcceptTimeout, HullsenseError, OcpError, OcpSolveError, OrderViolation, RunAborted, SchemaError, WireError
from .geometry import Hull2, barycenter, contains, convex_hull, diameter
from .models import ScenarioConfig, SolverConfig
from .observability import StructuredLogger, metrics_collector, trace_operation
from .ocp import OcpSpec, SelectionPolicy, select_plan
from .protocol import (
    Ack,
    AgentConfig,
    Connection,
    Hello,
    NeighborStates,
    PlanResult,
    ProtocolError,
    Shutdown,
    StreamConnection,
    WireSettings,
    exchange,
    memory_pipe,
    open_connection,
    send_error,
)
from .scenario import Network, build_agent, build_network

logger = StructuredLogger(__name__)

V_SLACK = 1e-6
CONTRACTION_SLACK = 1e-6
HULL_TOL = 1e-6
INPUT_TOL = 1e-9

StopReason = str  # "MaxSteps" | "DiameterBelow" | "Error"


def solver_settings(cfg: SolverConfig) -> SolverSettings:
    """Scenario solver section; HULLSENSE_SOLVER_* variables take precedence over it."""
    env, default = SolverSettings.from_env(), SolverSettings()
    values = {
        "max_iter": cfg.max_iter,
        "eps_abs": cfg.eps_abs,
        "eps_rel": cfg.eps_rel,
        "rho": cfg.rho,
        "over_relaxation": cfg.over_relaxation,
    }
    for key in ("max_iter", "eps_abs", "eps_rel", "rho"):
        if getattr(env, key) != getattr(default, key):
            values[key] = getattr(env, key)
    return SolverSettings(**values)


# ============================================================================
# Agent side
# ============================================================================

class AgentPlanner:
    """Planning state of one agent: its model, solver cache and last applied input."""

    def __init__(self, config: AgentConfig):
        self.config = config
        self.agent_id = config.agent_id
        self.model: LinearAgent = build_agent(config.model)
        self.solver = ConicSolver(solver_settings(config.solver))
        self.policy = SelectionPolicy(
            kind=config.policy.kind,
            delta_lex=config.policy.delta_lex,
            activation=config.policy.activation,
        )
        self.state_box = (
            (np.asarray(config.state_box[0], dtype=float), np.asarray(config.state_box[1], dtype=float))
            if config.state_box is not None
            else None
        )
        self.u_prev: Optional[np.ndarray] = None
        # solver state of the last solve per stage, reused on the next outer step
        self.warm: Dict[str, WarmStart] = {}

    def local_points(self, msg: NeighborStates) -> np.ndarray:
        own = self.model.proj @ np.asarray(msg.own_state, dtype=float)
        others = [np.asarray(msg.samples[k], dtype=float) for k in sorted(msg.samples)]
        return np.vstack([own] + others)

    def build_spec(self, msg: NeighborStates) -> OcpSpec:
        points = self.local_points(msg)
        cfg = self.config
        return OcpSpec(
            agent=self.model,
            M=cfg.M,
            Q=np.asarray(cfg.Q_diag, dtype=float),
            R=np.asarray(cfg.R_diag, dtype=float),
            kappa=cfg.kappa,
            hull=convex_hull(points),
            zbar=barycenter(points),
            x0=np.asarray(msg.own_state, dtype=float),
            u_prev=self.u_prev,
            target_velocity_zero=self.model.kind == "double_integrator",
            state_box=self.state_box,
            agent_id=self.agent_id,
            step=msg.j,
        )

    def _failure(self, msg: NeighborStates, status: str, detail: str) -> PlanResult:
        own = self.model.proj @ np.asarray(msg.own_state, dtype=float)
        return PlanResult(
            j=msg.j,
            agent_id=self.agent_id,
            u_seq=np.zeros((self.config.M, self.model.input_dim)).tolist(),
            terminal=own.tolist(),
            J_star=0.0,
            J=0.0,
            phi=0.0,
            lex_active=False,
            stage="primary",
            t_primary_ms=0.0,
            t_lex_ms=0.0,
            n_var=0,
            n_eq=0,
            n_ineq=0,
            hull_dim=0,
            status=status,
            detail=detail,
        )

    def plan(self, msg: NeighborStates) -> PlanResult:
        try:
            spec = self.build_spec(msg)
            plan = select_plan(spec, self.policy, self.solver, self.warm)
        except OcpSolveError as e:
            return self._failure(msg, e.status, e.detail)
        except OcpError as e:
            return self._failure(msg, "error", e.detail)

        self.u_prev = plan.u_seq[-1].copy()
        n_var, n_eq, n_ineq = plan.problem_size
        if plan.lex_active:
            logger.debug("Secondary plan adopted", agent_id=self.agent_id, j=msg.j, phi=plan.phi)
        return PlanResult(
            j=msg.j,
            agent_id=self.agent_id,
            u_seq=plan.u_seq.tolist(),
            terminal=plan.terminal.tolist(),
            J_star=plan.J_star,
            J=plan.J,
            phi=plan.phi,
            lex_active=plan.lex_active,
            stage=plan.stage,
            t_primary_ms=plan.t_primary_ms,
            t_lex_ms=plan.t_lex_ms,
            n_var=n_var,
            n_eq=n_eq,
            n_ineq=n_ineq,
            hull_dim=plan.hull_dim,
            status=plan.status_primary,
        )


async def agent_serve(conn: Connection, config: AgentConfig, executor: Optional[Executor] = None) -> None:
    """Answer NeighborStates with PlanResult until Shutdown; handshake already done."""
    planner = AgentPlanner(config)
    loop = asyncio.get_running_loop()
    try:
        while True:
            msg = await conn.wait()
            if isinstance(msg, NeighborStates):
                reply = await loop.run_in_executor(executor, planner.plan, msg)
                await conn.send(reply)
            elif isinstance(msg, Shutdown):
                await conn.send(Ack())
                logger.info("Agent shut down", agent_id=config.agent_id)
                return
            elif isinstance(msg, ProtocolError):
                raise WireError(f"coordinator reported {msg.code}: {msg.detail}", agent_id=config.agent_id)
            else:
                raise OrderViolation(f"unexpected {msg.TYPE} while idle", agent_id=config.agent_id)
    except WireError as e:
        logger.error("Agent connection failed", agent_id=config.agent_id, code=e.code, error=e.detail)
        await send_error(conn, e)
        raise
    finally:
        await conn.close()


async def agent_session(conn: Connection, agent_id: int, executor: Optional[Executor] = None) -> None:
    """Hello handshake followed by the serve loop."""
    reply = await exchange(conn, Hello(agent_id=agent_id))
    if isinstance(reply, ProtocolError):
        await conn.close()
        raise WireError(f"handshake rejected ({reply.code}): {reply.detail}", agent_id=agent_id)
    if not isinstance(reply, AgentConfig) or reply.agent_id != agent_id:
        err = OrderViolation(f"expected AgentConfig for agent {agent_id}, got {reply.TYPE}")
        await send_error(conn, err)
        await conn.close()
        raise err
    await conn.send(Ack())
    logger.info("Agent configured", agent_id=agent_id, M=reply.M, policy=reply.policy.kind)
    await agent_serve(conn, reply, executor)


async def agent_main(
    host: str,
    port: int,
    agent_id: int,
    settings: Optional[WireSettings] = None,
    connect_attempts: int = 20,
    retry_delay_s: float = 0.5,
) -> None:
    """TCP agent process: connect (retrying while the coordinator starts), then serve."""
    settings = settings or WireSettings.from_env()
    name = f"agent-{agent_id}"
    conn: Optional[StreamConnection] = None
    for attempt in range(1, connect_attempts + 1):
        try:
            conn = await open_connection(host, port, name=name, timeout_s=settings.timeout_s)
            break
        except WireError as e:
            if attempt == connect_attempts:
                raise
            logger.debug("Coordinator not reachable yet", agent_id=agent_id, attempt=attempt, error=e.detail)
            await asyncio.sleep(retry_delay_s)
    assert conn is not None
    await agent_session(conn, agent_id)


# ============================================================================
# Coordinator side
# ============================================================================

@dataclass
class NetworkState:
    j: int
    true_states: Dict[int, np.ndarray]
    last_inputs: Dict[int, np.ndarray]
    V_history: List[float]
    stop_reason: Optional[StopReason] = None
    violations: Dict[str, int] = field(default_factory=dict)

    @classmethod
    def initial(cls, network: Network) -> "NetworkState":
        states = {i: network.x0[i].copy() for i in network.ids}
        inputs = {i: np.zeros(network.agents[i].input_dim) for i in network.ids}
        return cls(j=0, true_states=states, last_inputs=inputs, V_history=[sample_diameter(network, states)])

    @property
    def V(self) -> float:
        return self.V_history[-1]


@dataclass(frozen=True)
class StepRecord:
    j: int
    agent_id: int
    V: float
    phi: float
    J_star: float
    J: float
    lex_active: bool
    stage: str
    t_primary_ms: float
    t_lex_ms: float
    problem_size: Tuple[int, int, int]
    hull_dim: int
    hull_ok: bool
    ri_strict: bool
    terminal: Tuple[float, ...]
    zbar: Tuple[float, ...]
    contraction: float
    contraction_bound: float


@dataclass(frozen=True)
class StateRow:
    t: int
    agent_id: int
    x: Tuple[float, ...]
    u: Optional[Tuple[float, ...]]


@dataclass
class StepOutcome:
    state: NetworkState
    records: List[StepRecord]
    rows: List[StateRow]


@dataclass
class RunResult:
    network: Network
    state: NetworkState
    records: List[StepRecord]
    rows: List[StateRow]
    transport: str
    error: Optional[str] = None

    @property
    def steps(self) -> int:
        return self.state.j


def sample_diameter(network: Network, states: Dict[int, np.ndarray]) -> float:
    return diameter(np.vstack([network.agents[i].proj @ states[i] for i in network.ids]))


class Coordinator:
    """Synchronous outer-step driver over one connection per agent."""

    def __init__(self, network: Network, connections: Dict[int, Connection]):
        if sorted(connections) != network.ids:
            raise RunAborted(f"connections {sorted(connections)} do not cover agents {network.ids}")
        self.network = network
        self.connections = connections

    async def configure(self, agent_id: int) -> None:
        """Coordinator half of the handshake for an already-open connection."""
        conn = self.connections[agent_id]
        hello = await conn.recv()
        if not isinstance(hello, Hello) or hello.agent_id != agent_id:
            err = OrderViolation(f"expected Hello from agent {agent_id}, got {hello.TYPE}")
            await send_error(conn, err)
            raise err
        await send_config(conn, self.network, agent_id)

    async def _request_plan(self, agent_id: int, request: NeighborStates) -> PlanResult:
        reply = await exchange(self.connections[agent_id], request)
        if isinstance(reply, ProtocolError):
            raise RunAborted(f"agent reported {reply.code}: {reply.detail}", agent_id=agent_id, j=request.j)
        if not isinstance(reply, PlanResult) or reply.agent_id != agent_id or reply.j != request.j:
            raise RunAborted(f"unexpected reply {reply.TYPE}", agent_id=agent_id, j=request.j)
        if reply.status != "optimal":
            raise RunAborted(
                f"plan failed with status {reply.status}: {reply.detail}", agent_id=agent_id, j=request.j
            )
        return reply

    def _violation(self, counts: Dict[str, int], monitor: str, **context: object) -> None:
        counts[monitor] = counts.get(monitor, 0) + 1
        metrics_collector.record_violation(monitor)
        logger.error("Monitor violation", monitor=monitor, **context)

    async def run_outer_step(self, state: NetworkState) -> StepOutcome:
        net = self.network
        ids, M, j = net.ids, net.M, state.j
        samples = {i: net.agents[i].proj @ state.true_states[i] for i in ids}
        groups = {i: [i] + sorted(graph.neighbors(net.schedule, i, j)) for i in ids}

        requests = {
            i: NeighborStates(
                j=j,
                samples={k: samples[k].tolist() for k in groups[i][1:]},
                own_state=state.true_states[i].tolist(),
            )
            for i in ids
        }
        outcomes = await asyncio.gather(*(self._request_plan(i, requests[i]) for i in ids), return_exceptions=True)
        for outcome in outcomes:
            if isinstance(outcome, BaseException):
                raise outcome
        replies: Dict[int, PlanResult] = dict(zip(ids, outcomes))  # type: ignore[arg-type]

        new_states: Dict[int, np.ndarray] = {}
        new_inputs: Dict[int, np.ndarray] = {}
        rows: List[StateRow] = []
        propagated: Dict[int, np.ndarray] = {}
        for i in ids:
            agent, reply = net.agents[i], replies[i]
            u_seq = np.asarray(reply.u_seq, dtype=float)
            if u_seq.shape != (M, agent.input_dim):
                raise RunAborted(f"input sequence has shape {u_seq.shape}, expected {(M, agent.input_dim)}", agent_id=i, j=j)
            if not all(agent.input_set.contains(u, INPUT_TOL) for u in u_seq):
                raise RunAborted("input sequence leaves the input set", agent_id=i, j=j)
            xs = simulate(agent, state.true_states[i], u_seq)
            rows.extend(StateRow(t=j * M + k, agent_id=i, x=tuple(xs[k]), u=tuple(u_seq[k])) for k in range(M))
            new_states[i] = xs[-1]
            new_inputs[i] = u_seq[-1]
            propagated[i] = agent.proj @ xs[-1]

        V_next = diameter(np.vstack([propagated[i] for i in ids]))
        violations = dict(state.violations)
        if V_next > state.V + V_SLACK:
            self._violation(violations, "v_monotone", j=j, V=state.V, V_next=V_next)

        records: List[StepRecord] = []
        for i in ids:
            reply = replies[i]
            points = np.vstack([samples[k] for k in groups[i]])
            hull: Hull2 = convex_hull(points)
            zbar = barycenter(points)
            hull_ok = contains(hull, propagated[i], HULL_TOL)
            ri_strict = hull.dim == 0 or reply.phi > 0.0
            contraction = float(np.linalg.norm(propagated[i] - zbar))
            bound = net.config.kappa * float(np.linalg.norm(samples[i] - zbar))
            if not hull_ok:
                self._violation(violations, "hull", agent_id=i, j=j)
            if contraction > bound + CONTRACTION_SLACK:
                self._violation(violations, "contraction", agent_id=i, j=j, value=contraction, bound=bound)
            if not ri_strict:
                violations["ri_strict"] = violations.get("ri_strict", 0) + 1
            records.append(
                StepRecord(
                    j=j,
                    agent_id=i,
                    V=state.V,
                    phi=reply.phi,
                    J_star=reply.J_star,
                    J=reply.J,
                    lex_active=reply.lex_active,
                    stage=reply.stage,
                    t_primary_ms=reply.t_primary_ms,
                    t_lex_ms=reply.t_lex_ms,
                    problem_size=(reply.n_var, reply.n_eq, reply.n_ineq),
                    hull_dim=hull.dim,
                    hull_ok=hull_ok,
                    ri_strict=ri_strict,
                    terminal=tuple(propagated[i]),
                    zbar=tuple(zbar),
                    contraction=contraction,
                    contraction_bound=bound,
                )
            )

        metrics_collector.record_outer_step()
        logger.info("Outer step", j=j, V=state.V, V_next=V_next)
        next_state = replace(
            state,
            j=j + 1,
            true_states=new_states,
            last_inputs=new_inputs,
            V_history=state.V_history + [V_next],
            violations=violations,
        )
        return StepOutcome(state=next_state, records=records, rows=rows)

    def _stop_reason(self, state: NetworkState) -> Optional[StopReason]:
        run = self.network.config.run
        if state.V < run.stop_tol:
            return "DiameterBelow"
        if state.j >= run.J_max:
            return "MaxSteps"
        return None

    async def shutdown(self) -> None:
        for agent_id, conn in self.connections.items():
            if conn.closed or conn.busy:
                continue
            try:
                await exchange(conn, Shutdown())
            except WireError as e:
                logger.warning("Agent did not acknowledge shutdown", agent_id=agent_id, error=e.detail)
            finally:
                await conn.close()

    async def run(self, transport: str) -> RunResult:
        state = NetworkState.initial(self.network)
        records: List[StepRecord] = []
        rows: List[StateRow] = []
        error: Optional[str] = None
        with trace_operation("run", scenario=self.network.config.name, transport=transport):
            try:
                while (reason := self._stop_reason(state)) is None:
                    outcome = await self.run_outer_step(state)
                    state = outcome.state
                    records.extend(outcome.records)
                    rows.extend(outcome.rows)
                state.stop_reason = reason
            except (RunAborted, WireError) as e:
                state.stop_reason = "Error"
                error = str(e)
                logger.error("Run aborted", j=state.j, error=error)
            finally:
                await self.shutdown()

        M = self.network.M
        rows.extend(
            StateRow(t=state.j * M, agent_id=i, x=tuple(state.true_states[i]), u=None) for i in self.network.ids
        )
        logger.info("Run finished", stop_reason=state.stop_reason, steps=state.j, V=state.V)
        return RunResult(
            network=self.network, state=state, records=records, rows=rows, transport=transport, error=error
        )


async def send_config(conn: Connection, network: Network, agent_id: int) -> None:
    ack = await exchange(conn, network.agent_config(agent_id))
    if not isinstance(ack, Ack):
        err = OrderViolation(f"expected Ack to AgentConfig, got {ack.TYPE}", agent_id=agent_id)
        await send_error(conn, err)
        raise err


# ============================================================================
# Transports
# ============================================================================

async def run_inprocess(network: Network, executor: Optional[Executor] = None) -> RunResult:
    """All agents in this event loop over memory pipes; solves run on a thread pool."""
    settings = WireSettings.from_env()
    own_pool = executor is None
    pool = executor or ThreadPoolExecutor(max_workers=len(network.ids), thread_name_prefix="hullsense-agent")
    coordinator_side: Dict[int, Connection] = {}
    agent_tasks: List["asyncio.Task[None]"] = []
    try:
        for i in network.ids:
            c_side, a_side = memory_pipe(f"agent-{i}", settings.timeout_s)
            coordinator_side[i] = c_side
            agent_tasks.append(asyncio.create_task(agent_session(a_side, i, pool)))
        coordinator = Coordinator(network, coordinator_side)
        await asyncio.gather(*(coordinator.configure(i) for i in network.ids))
        result = await coordinator.run("inprocess")
        await _join_agents(agent_tasks)
        return result
    finally:
        for task in agent_tasks:
            if not task.done():
                task.cancel()
        if own_pool:
            pool.shutdown(wait=True)


async def _join_agents(tasks: List["asyncio.Task[None]"]) -> None:
    for outcome in await asyncio.gather(*tasks, return_exceptions=True):
        if isinstance(outcome, HullsenseError):
            logger.warning("Agent task ended with an error", error=str(outcome))


async def coordinate(
    network: Network,
    host: str = "0.0.0.0",
    port: int = 0,
    on_ready: Optional[Callable[[int], Union[None, Awaitable[None]]]] = None,
    accept_timeout_s: Optional[float] = None,
) -> RunResult:
    """
    TCP coordinator: accept one connection per agent, configure it, run.

    ``port=0`` binds an ephemeral port; ``on_ready`` receives the bound port
    once the server listens. Raises AcceptTimeout when some agent has not
    connected within ``accept_timeout_s`` (default from WireSettings).
    """
    settings = WireSettings.from_env()
    accept_timeout_s = settings.accept_timeout_s if accept_timeout_s is None else accept_timeout_s
    connections: Dict[int, Connection] = {}
    claimed: set = set()
    all_connected = asyncio.Event()

    async def handle(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        conn = StreamConnection(reader, writer, name=str(peer), timeout_s=settings.timeout_s)
        agent_id: Optional[int] = None
        try:
            hello = await conn.recv()
            if not isinstance(hello, Hello):
                raise OrderViolation(f"expected Hello, got {hello.TYPE}")
            if hello.agent_id not in network.agents or hello.agent_id in claimed:
                raise SchemaError(f"agent id {hello.agent_id} is unknown or already connected")
            agent_id = hello.agent_id
            claimed.add(agent_id)
            conn.name = f"agent-{agent_id}"
            await send_config(conn, network, agent_id)
        except WireError as e:
            if agent_id is not None:
                claimed.discard(agent_id)
            logger.warning("Rejected agent connection", peer=str(peer), code=e.code, error=e.detail)
            await send_error(conn, e)
            await conn.close()
            return
        connections[agent_id] = conn
        logger.info("Agent connected", agent_id=agent_id, peer=str(peer))
        if len(connections) == len(network.ids):
            all_connected.set()

    server = await asyncio.start_server(handle, host, port)
    bound = server.sockets[0].getsockname()[1]
    logger.info("Coordinator listening", host=host, port=bound, agents=len(network.ids))
    try:
        if on_ready is not None:
            maybe = on_ready(bound)
            if asyncio.iscoroutine(maybe):
                await maybe
        try:
            await asyncio.wait_for(all_connected.wait(), accept_timeout_s)
        except asyncio.TimeoutError as e:
            missing = sorted(set(network.ids) - set(connections))
            for conn in connections.values():
                await conn.close()
            raise AcceptTimeout(
                f"only {len(connections)} of {len(network.ids)} agents connected within {accept_timeout_s:g} s",
                missing=missing,
            ) from e
        return await Coordinator(network, connections).run("tcp")
    finally:
        server.close()
        await server.wait_closed()


def run_scenario(config: ScenarioConfig, transport: Optional[str] = None) -> RunResult:
    """Build the network and run it to completion (blocking)."""
    network = build_network(config)
    kind = transport or config.transport.kind
    if kind == "inprocess":
        return asyncio.run(run_inprocess(network))
    return asyncio.run(run_tcp_local(network, config.transport.host))


async def run_tcp_local(network: Network, host: str = "127.0.0.1") -> RunResult:
    """Coordinator and TCP agents in one event loop on an ephemeral port."""
    agent_tasks: List["asyncio.Task[None]"] = []

    def spawn(port: int) -> None:
        for i in network.ids:
            agent_tasks.append(asyncio.create_task(agent_main(host, port, i)))

    try:
        result = await coordinate(network, host=host, port=0, on_ready=spawn)
        await _join_agents(agent_tasks)
        return result
    finally:
        for task in agent_tasks:
            if not task.done():
                task.cancel()
