"""
Agent models: linear prediction models, input sets, controllability and
explicit horizon bounds for integrator networks.
"""
from __future__ import annotations
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Literal, Optional, Sequence, Union

import numpy as np

from .errors import ControllabilityError, DynamicsError, HorizonError

RANK_TOL = 1e-10
CEIL_SLACK = 1e-9

ArrayLike = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True, eq=False)
class BallInput:
    """Euclidean ball ‖u‖ ≤ radius"""
    radius: float
    kind: Literal["ball"] = "ball"

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise DynamicsError(f"input radius must be positive, got {self.radius}")

    @property
    def inscribed_radius(self) -> float:
        return float(self.radius)

    def contains(self, u: ArrayLike, tol: float = 1e-9) -> bool:
        return float(np.linalg.norm(u)) <= self.radius + tol


@dataclass(frozen=True, eq=False)
class BoxInput:
    """Componentwise bounds lower ≤ u ≤ upper with 0 strictly inside"""
    lower: np.ndarray
    upper: np.ndarray
    kind: Literal["box"] = "box"

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DynamicsError("box bounds must be vectors of equal length")
        if not (np.all(lo < 0.0) and np.all(hi > 0.0)):
            raise DynamicsError("box input set must contain 0 in its interior")

    @property
    def inscribed_radius(self) -> float:
        return float(np.minimum(-self.lower, self.upper).min())

    def contains(self, u: ArrayLike, tol: float = 1e-9) -> bool:
        v = np.asarray(u, dtype=float)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))


InputSet = Union[BallInput, BoxInput]


@dataclass(frozen=True, eq=False)
class LinearAgent:
    """x(t+1) = A x(t) + B u(t); consensus variable z = P x."""

    A: np.ndarray
    B: np.ndarray
    input_set: InputSet
    proj: np.ndarray
    kind: str = "linear"

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        P = np.atleast_2d(np.asarray(self.proj, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "proj", P)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or P.shape[1] != n:
            raise DynamicsError(f"inconsistent model shapes A{A.shape} B{B.shape} P{P.shape}")
        if isinstance(self.input_set, BoxInput) and self.input_set.lower.shape[0] != B.shape[1]:
            raise DynamicsError("box bounds do not match the input dimension")

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    @property
    def consensus_dim(self) -> int:
        return self.proj.shape[0]


@dataclass(frozen=True)
class SimulationAgent:
    """Black-box plant x(t+1) = f(x, u) with a consensus projection; not OCP-compatible."""

    step_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    proj: np.ndarray
    kind: str = "nonlinear"


@dataclass(frozen=True)
class HorizonBound:
    M: int
    derivation: Dict[str, Any] = field(default_factory=dict)


def _input_set(d: int, u_max: float, box: bool) -> InputSet:
    if not u_max > 0:
        raise DynamicsError(f"u_max must be positive, got {u_max}")
    if box:
        return BoxInput(lower=np.full(d, -u_max), upper=np.full(d, u_max))
    return BallInput(radius=float(u_max))


def single_integrator(d: int, u_max: float, box: bool = False) -> LinearAgent:
    if d < 1:
        raise DynamicsError(f"dimension must be >= 1, got {d}")
    eye = np.eye(d)
    return LinearAgent(A=eye, B=eye.copy(), input_set=_input_set(d, u_max, box), proj=eye.copy(), kind="single_integrator")


def double_integrator(d: int, u_max: float, box: bool = False) -> LinearAgent:
    if d < 1:
        raise DynamicsError(f"dimension must be >= 1, got {d}")
    eye, zero = np.eye(d), np.zeros((d, d))
    A = np.block([[eye, eye], [zero, eye]])
    B = np.vstack([zero, eye])
    P = np.hstack([eye, zero])
    return LinearAgent(A=A, B=B, input_set=_input_set(d, u_max, box), proj=P, kind="double_integrator")


def step(agent: Union[LinearAgent, SimulationAgent], x: ArrayLike, u: ArrayLike) -> np.ndarray:
    xv = np.asarray(x, dtype=float)
    uv = np.asarray(u, dtype=float)
    if isinstance(agent, SimulationAgent):
        return np.asarray(agent.step_fn(xv, uv), dtype=float)
    if xv.shape != (agent.state_dim,) or uv.shape != (agent.input_dim,):
        raise DynamicsError(
            f"dimension mismatch: x{xv.shape} u{uv.shape} for n={agent.state_dim} m={agent.input_dim}"
        )
    return agent.A @ xv + agent.B @ uv


def simulate(agent: Union[LinearAgent, SimulationAgent], x0: ArrayLike, u_seq: ArrayLike) -> np.ndarray:
    """States x(0..M) for inputs u(0..M-1)."""
    xs = [np.asarray(x0, dtype=float)]
    for u in np.atleast_2d(np.asarray(u_seq, dtype=float)):
        xs.append(step(agent, xs[-1], u))
    return np.vstack(xs)


def controllability_matrix(agent: LinearAgent, M: int) -> np.ndarray:
    """[B, AB, ..., A^{M-1} B]; block k maps u(M-1-k) into x(M)."""
    if M < 1:
        raise DynamicsError(f"horizon must be >= 1, got {M}")
    blocks = [agent.B]
    for _ in range(M - 1):
        blocks.append(agent.A @ blocks[-1])
    return np.hstack(blocks)


def reach_radius(agent: LinearAgent, M: int) -> float:
    """Radius of the ball of endpoint displacements reachable in M admissible steps."""
    C = controllability_matrix(agent, M)
    n = agent.state_dim
    sv = np.linalg.svd(C, compute_uv=False)
    if len(sv) < n or sv[n - 1] <= RANK_TOL * max(1.0, sv[0]):
        rank = int(np.sum(sv > RANK_TOL * max(1.0, sv[0]))) if len(sv) else 0
        raise ControllabilityError(f"controllability matrix has rank {rank} < n={n}", M=M)
    return float(sv[n - 1]) * agent.input_set.inscribed_radius


def _ceil(x: float) -> int:
    return int(math.ceil(x - CEIL_SLACK))


def horizon_si(V0: float, u_min: float) -> HorizonBound:
    if not u_min > 0:
        raise DynamicsError(f"u_min must be positive, got {u_min}")
    if V0 < 0:
        raise DynamicsError(f"V0 must be nonnegative, got {V0}")
    M = max(1, _ceil(V0 / u_min))
    return HorizonBound(M=M, derivation={"formula": "si", "V0": V0, "u_min": u_min})


def horizon_di(Vr0: float, v_max: float, u_min: float) -> HorizonBound:
    if not u_min > 0:
        raise DynamicsError(f"u_min must be positive, got {u_min}")
    if Vr0 < 0 or v_max < 0:
        raise DynamicsError("Vr0 and v_max must be nonnegative")
    m1 = _ceil(2.0 * v_max / u_min)
    m2 = _ceil(math.sqrt(Vr0 / u_min))
    M = max(2, m1 + 2 * m2)
    return HorizonBound(
        M=M,
        derivation={"formula": "di", "V0": Vr0, "u_min": u_min, "v_max": v_max, "M1": m1, "M2": m2},
    )


def u_min_of(agents: Sequence[LinearAgent]) -> float:
    return min(a.input_set.inscribed_radius for a in agents)


def warmstart_si(agent: LinearAgent, x0: ArrayLike, target: ArrayLike, M: int) -> np.ndarray:
    """Constant input (target - P x0)/M steering a single integrator onto target."""
    if agent.kind != "single_integrator":
        raise DynamicsError("warmstart_si needs a single-integrator agent")
    u = (np.asarray(target, dtype=float) - agent.proj @ np.asarray(x0, dtype=float)) / M
    if not agent.input_set.contains(u):
        raise HorizonError(f"constant steering input {np.linalg.norm(u):.6g} exceeds the input set", M=M)
    return np.tile(u, (M, 1))


def warmstart_di(agent: LinearAgent, x0: ArrayLike, target: ArrayLike, M: int) -> np.ndarray:
    """
    Velocity reset then rest-to-rest translation for a double integrator.

    M1 steps apply -v0/M1, then M2 steps accelerate with dr/M2^2 and M2 steps
    decelerate with -dr/M2^2; the remainder is zero-padded.
    """
    if agent.kind != "double_integrator":
        raise DynamicsError("warmstart_di needs a double-integrator agent")
    d = agent.consensus_dim
    x = np.asarray(x0, dtype=float)
    r_u = agent.input_set.inscribed_radius
    v0 = x[d:]

    m1 = _ceil(2.0 * float(np.linalg.norm(v0)) / r_u)
    if m1 == 0 and np.linalg.norm(v0) > 0:
        m1 = 1
    r_after = x[:d] + (m1 + 1) / 2.0 * v0 if m1 else x[:d]
    dr = np.asarray(target, dtype=float) - r_after
    m2 = _ceil(math.sqrt(float(np.linalg.norm(dr)) / r_u))
    if M < m1 + 2 * m2:
        raise HorizonError(f"horizon {M} shorter than the constructive bound {m1 + 2 * m2}", M1=m1, M2=m2)

    u_seq = np.zeros((M, d))
    if m1:
        u_seq[:m1] = -v0 / m1
    if m2:
        a = dr / m2**2
        u_seq[m1:m1 + m2] = a
        u_seq[m1 + m2:m1 + 2 * m2] = -a
    return u_seq
