"""
Brute-force reference implementations for the test suite.

Nothing here calls production helpers: hulls, costs, controllability and
reachability are recomputed from raw fields (vertices, A, B, proj, cones).
"""
from __future__ import annotations
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from hullsense.conic import ConicProgram, NonNeg, SecondOrder, Zero
from hullsense.dynamics import BallInput, LinearAgent
from hullsense.geometry import Hull2
from hullsense.ocp import OcpSpec


# ============================================================================
# Geometry
# ============================================================================

def _segment_distances(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(pts - a, axis=1)
    t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(pts - (a + t[:, None] * ab), axis=1)


def hull_distance(hull: Hull2, pts: np.ndarray) -> np.ndarray:
    """Distance of each row of pts to the polygon spanned by hull.vertices."""
    pts = np.atleast_2d(pts)
    V = np.asarray(hull.vertices, dtype=float)
    if len(V) == 1:
        return np.linalg.norm(pts - V[0], axis=1)
    if len(V) == 2:
        return _segment_distances(pts, V[0], V[1])
    area = 0.5 * sum(V[k, 0] * V[(k + 1) % len(V), 1] - V[(k + 1) % len(V), 0] * V[k, 1] for k in range(len(V)))
    if area < 0:
        V = V[::-1]
    inside = np.ones(len(pts), dtype=bool)
    edge_d = np.full(len(pts), np.inf)
    for k in range(len(V)):
        a, b = V[k], V[(k + 1) % len(V)]
        cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        inside &= cross >= 0.0
        edge_d = np.minimum(edge_d, _segment_distances(pts, a, b))
    return np.where(inside, 0.0, edge_d)


def sample_boundary_distance(hull: Hull2, p: Sequence[float], n_samples: int) -> float:
    """Min distance from p to boundary points sampled n_samples times per edge."""
    if hull.dim != 2:
        raise ValueError("sampled boundary distance needs a 2-D hull")
    V = np.asarray(hull.vertices, dtype=float)
    t = np.linspace(0.0, 1.0, n_samples + 1)[:, None]
    q = np.asarray(p, dtype=float)
    best = math.inf
    for k in range(len(V)):
        a, b = V[k], V[(k + 1) % len(V)]
        samples = a + t * (b - a)
        best = min(best, float(np.min(np.linalg.norm(samples - q, axis=1))))
    return best


# ============================================================================
# Grid-search OCP
# ============================================================================

@dataclass
class GridOracleResult:
    best_cost: float
    best_inputs: Optional[np.ndarray]
    grid_step: float
    feasible: bool


def _input_box(agent: LinearAgent) -> Tuple[np.ndarray, np.ndarray]:
    s = agent.input_set
    m = agent.B.shape[1]
    if isinstance(s, BallInput):
        return np.full(m, -s.radius), np.full(m, s.radius)
    return np.asarray(s.lower, dtype=float), np.asarray(s.upper, dtype=float)


def _admissible_rows(agent: LinearAgent, U: np.ndarray) -> np.ndarray:
    """U has shape (N, M, m); True where every step lies in the input set."""
    s = agent.input_set
    if isinstance(s, BallInput):
        return np.all(np.linalg.norm(U, axis=2) <= s.radius + 1e-12, axis=1)
    lo, hi = _input_box(agent)
    return np.all((U >= lo - 1e-12) & (U <= hi + 1e-12), axis=(1, 2))


def _evaluate(spec: OcpSpec, U: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """(cost, feasible) for a batch of input sequences U of shape (N, M, m)."""
    a = spec.agent
    A, B, P = a.A, a.B, a.proj
    d = P.shape[0]
    if spec.target_velocity_zero:
        S = np.eye(A.shape[0])
        target = np.concatenate([spec.zbar, np.zeros(A.shape[0] - d)])
        w = np.concatenate([spec.Q, spec.Q])
    else:
        S, target, w = P, np.asarray(spec.zbar, dtype=float), np.asarray(spec.Q, dtype=float)

    N = U.shape[0]
    x = np.tile(np.asarray(spec.x0, dtype=float), (N, 1))
    prev = np.tile(np.asarray(spec.u_prev, dtype=float), (N, 1))
    cost = np.zeros(N)
    for k in range(spec.M):
        e = x @ S.T - target
        cost += np.sum(w * e * e, axis=1)
        du = U[:, k, :] - prev
        cost += np.sum(np.asarray(spec.R) * du * du, axis=1)
        prev = U[:, k, :]
        x = x @ A.T + U[:, k, :] @ B.T

    terminal = x @ P.T
    in_hull = hull_distance(spec.hull, terminal) <= tol
    radius = spec.kappa * float(np.linalg.norm(P @ spec.x0 - spec.zbar))
    contracts = np.linalg.norm(terminal - spec.zbar, axis=1) <= radius + tol
    feasible = in_hull & contracts & _admissible_rows(a, U)
    return cost, feasible


def _batch_best(spec: OcpSpec, U: np.ndarray, tol: float) -> Optional[Tuple[float, np.ndarray]]:
    if U.shape[0] == 0:
        return None
    cost, feasible = _evaluate(spec, U, tol)
    if not np.any(feasible):
        return None
    cost = np.where(feasible, cost, np.inf)
    k = int(np.argmin(cost))
    return float(cost[k]), U[k].copy()


def _product(axes: Sequence[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def grid_ocp(spec: OcpSpec, grid_step: float = 1e-2, shrink: float = 5.0, final_ratio: float = 0.02) -> GridOracleResult:
    """
    Exhaustive search over input grids intersected with the input set,
    coarse-to-fine: a coarse global grid, then local windows around the
    incumbent until the step falls below grid_step * final_ratio.
    """
    a = spec.agent
    M, m = spec.M, a.B.shape[1]
    if M > 2 or m > 2:
        raise ValueError(f"grid oracle is limited to M <= 2 and input dim <= 2, got M={M}, m={m}")
    if spec.state_box is not None:
        raise ValueError("grid oracle does not model state boxes")

    lo, hi = _input_box(a)
    span = float(np.max(hi - lo))
    # keep the joint coarse grid near 1e5 sequences
    step = grid_step if M == 1 else max(grid_step, span / 20.0)
    axes = [np.arange(lo[c], hi[c] + step / 2, step) for c in range(m)]
    single = _product(axes)
    if M == 1:
        U = single[:, None, :]
    else:
        i, j = np.meshgrid(np.arange(len(single)), np.arange(len(single)), indexing="ij")
        U = np.stack([single[i.ravel()], single[j.ravel()]], axis=1)
    U = U[_admissible_rows(a, U)]
    best = _batch_best(spec, U, step)
    if best is None:
        return GridOracleResult(best_cost=math.inf, best_inputs=None, grid_step=grid_step, feasible=False)

    while step > grid_step * final_ratio:
        new_step = step / shrink
        offsets = np.arange(-2 * step, 2 * step + new_step / 2, new_step)
        local = _product([offsets] * (M * m)).reshape(-1, M, m) + best[1][None, :, :]
        local = local[_admissible_rows(a, local)]
        candidate = _batch_best(spec, local, new_step)
        step = new_step
        if candidate is not None:
            best = candidate
    return GridOracleResult(best_cost=best[0], best_inputs=best[1], grid_step=grid_step, feasible=True)


# ============================================================================
# Reachability and connectivity
# ============================================================================

@dataclass
class ReachReport:
    rho: float
    samples: int
    failures: int
    worst_input_norm: float
    worst_endpoint_error: float


def _controllability(agent: LinearAgent, M: int) -> np.ndarray:
    blocks = [agent.B]
    for _ in range(M - 1):
        blocks.append(agent.A @ blocks[-1])
    return np.hstack(blocks)


def _input_radius(agent: LinearAgent) -> float:
    s = agent.input_set
    if isinstance(s, BallInput):
        return float(s.radius)
    return float(np.min(np.minimum(-np.asarray(s.lower), np.asarray(s.upper))))


def verify_reach_ball(
    agent: LinearAgent, M: int, n_samples: int, seed: int, radius_scale: float = 1.0, on_sphere: bool = False
) -> ReachReport:
    """
    Sample displacements in the ball of radius rho = sigma_min(C) r_u, steer
    with the minimum-norm input sequence and check bounds and endpoints.
    """
    n, m = agent.A.shape[0], agent.B.shape[1]
    C = _controllability(agent, M)
    sv = np.linalg.svd(C, compute_uv=False)
    if len(sv) < n or sv[n - 1] <= 1e-10 * max(1.0, sv[0]):
        raise ValueError(f"controllability matrix is rank deficient at M={M}")
    r_u = _input_radius(agent)
    rho = float(sv[n - 1]) * r_u * radius_scale

    rng = np.random.default_rng(seed)
    failures = 0
    worst_u = 0.0
    worst_e = 0.0
    for _ in range(n_samples):
        direction = rng.normal(size=n)
        direction /= np.linalg.norm(direction)
        r = rho if on_sphere else rho * rng.uniform() ** (1.0 / n)
        delta = r * direction
        xi = rng.normal(size=n)

        stacked = np.linalg.lstsq(C, delta, rcond=None)[0]
        # block k of C multiplies u(M-1-k)
        u_seq = stacked.reshape(M, m)[::-1]
        x = xi.copy()
        for u in u_seq:
            x = agent.A @ x + agent.B @ u
        expected = np.linalg.matrix_power(agent.A, M) @ xi + delta
        u_norm = float(np.max(np.linalg.norm(u_seq, axis=1)))
        err = float(np.linalg.norm(x - expected))
        worst_u = max(worst_u, u_norm)
        worst_e = max(worst_e, err)
        if u_norm > r_u + 1e-9 or err > 1e-9:
            failures += 1
    return ReachReport(rho=rho, samples=n_samples, failures=failures, worst_input_norm=worst_u, worst_endpoint_error=worst_e)


def reachability_matrix(edges: Iterable[Tuple[int, int]], node_count: int) -> bool:
    """A root exists iff some row of (I + Adj)^(l-1) is entirely nonzero."""
    adj = np.eye(node_count, dtype=np.int64)
    for k, i in edges:
        adj[k - 1, i - 1] = 1
    reach = np.eye(node_count, dtype=np.int64)
    for _ in range(max(node_count - 1, 1)):
        reach = np.minimum(reach @ adj, 1)
    return bool(np.any(np.all(reach > 0, axis=1)))


# ============================================================================
# Cone membership
# ============================================================================

def cone_violation(prog: ConicProgram, y: np.ndarray) -> float:
    """Largest violation of b - A y in K, checked block by block."""
    s = prog.b - prog.A @ np.asarray(y, dtype=float)
    worst = 0.0
    r = 0
    for blk in prog.cones.blocks:
        part = s[r:r + blk.size]
        if isinstance(blk, Zero):
            worst = max(worst, float(np.max(np.abs(part))))
        elif isinstance(blk, NonNeg):
            worst = max(worst, float(max(0.0, -np.min(part))))
        elif isinstance(blk, SecondOrder):
            worst = max(worst, float(max(0.0, np.linalg.norm(part[1:]) - part[0])))
        r += blk.size
    return worst
