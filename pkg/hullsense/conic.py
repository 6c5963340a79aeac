"""
Operator-splitting solver for conic programs

    minimize    c'y
    subject to  b - A y in K,   K = Zero x NonNeg x SOC x ...

The splitting follows the OSQP scheme with P = 0: z = A y is constrained to
C = b - K, the linear step uses a cached Cholesky factorization of
sigma*I + A' diag(rho) A, and z is updated by projection onto C. The
penalty rho is rebalanced from the ratio of normalized primal and dual
residuals, as OSQP does; each distinct rho gets its own cached factor.
"""
from __future__ import annotations
import hashlib
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConeError


# ============================================================================
# Cones
# ============================================================================

@dataclass(frozen=True)
class Zero:
    size: int


@dataclass(frozen=True)
class NonNeg:
    size: int


@dataclass(frozen=True)
class SecondOrder:
    """(t, v) with ||v|| <= t; the first coordinate is t"""
    size: int


ConeBlock = Union[Zero, NonNeg, SecondOrder]


@dataclass(frozen=True, eq=False)
class ConeSpec:
    blocks: Tuple[ConeBlock, ...]
    zero_idx: np.ndarray = field(init=False, repr=False)
    nonneg_idx: np.ndarray = field(init=False, repr=False)
    soc_groups: Dict[int, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        blocks = tuple(self.blocks)
        object.__setattr__(self, "blocks", blocks)
        zero: List[int] = []
        nonneg: List[int] = []
        soc: Dict[int, List[List[int]]] = {}
        offset = 0
        for blk in blocks:
            if not isinstance(blk, (Zero, NonNeg, SecondOrder)):
                raise ConeError(f"unknown cone block {blk!r}")
            if blk.size < 1:
                raise ConeError(f"cone block sizes must be >= 1, got {blk}")
            rows = list(range(offset, offset + blk.size))
            if isinstance(blk, Zero):
                zero.extend(rows)
            elif isinstance(blk, NonNeg):
                nonneg.extend(rows)
            else:
                soc.setdefault(blk.size, []).append(rows)
            offset += blk.size
        object.__setattr__(self, "zero_idx", np.asarray(zero, dtype=int))
        object.__setattr__(self, "nonneg_idx", np.asarray(nonneg, dtype=int))
        # equal-size SOC blocks are projected together
        object.__setattr__(
            self, "soc_groups", {size: np.asarray(rows, dtype=int) for size, rows in sorted(soc.items())}
        )

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def n_eq(self) -> int:
        return int(self.zero_idx.size)

    @property
    def n_ineq(self) -> int:
        return self.size - self.n_eq

    def eq_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[self.zero_idx] = True
        return mask


def _project_soc(V: np.ndarray) -> np.ndarray:
    t = V[:, 0]
    x = V[:, 1:]
    nx = np.linalg.norm(x, axis=1)
    out = V.copy()
    below = nx <= -t
    outside = (nx > np.abs(t))
    out[below] = 0.0
    if np.any(outside):
        alpha = 0.5 * (t[outside] + nx[outside])
        out[outside, 0] = alpha
        out[outside, 1:] = (alpha / nx[outside])[:, None] * x[outside]
    return out


def project_cone(v: np.ndarray, cones: ConeSpec) -> np.ndarray:
    """Euclidean projection onto K, block by block."""
    v = np.asarray(v, dtype=float)
    if v.shape != (cones.size,):
        raise ConeError(f"vector of length {v.shape} does not match cone size {cones.size}")
    out = v.copy()
    if cones.zero_idx.size:
        out[cones.zero_idx] = 0.0
    if cones.nonneg_idx.size:
        out[cones.nonneg_idx] = np.maximum(v[cones.nonneg_idx], 0.0)
    for idx in cones.soc_groups.values():
        out[idx] = _project_soc(v[idx])
    return out


def cone_distance(v: np.ndarray, cones: ConeSpec) -> float:
    return float(np.linalg.norm(np.asarray(v, dtype=float) - project_cone(v, cones)))


# ============================================================================
# Programs
# ============================================================================

@dataclass(frozen=True, eq=False)
class ConicProgram:
    """minimize c'y subject to b - A y in cones"""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    cones: ConeSpec
    var_slices: Mapping[str, slice] = field(default_factory=dict)

    def __post_init__(self) -> None:
        c = np.asarray(self.c, dtype=float)
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if c.ndim != 1 or A.shape != (b.shape[0], c.shape[0]):
            raise ConeError(f"dimension mismatch: c{c.shape} A{A.shape} b{b.shape}")
        if b.shape[0] != self.cones.size:
            raise ConeError(f"{b.shape[0]} constraint rows but cone size {self.cones.size}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ConeError("program data must be finite")

    @property
    def n_var(self) -> int:
        return self.c.shape[0]

    @property
    def problem_size(self) -> Tuple[int, int, int]:
        return self.n_var, self.cones.n_eq, self.cones.n_ineq

    def value(self, y: np.ndarray, name: str) -> np.ndarray:
        return np.asarray(y)[self.var_slices[name]]


@dataclass
class Affine:
    """Affine expression sum_v T_v y_v + const over named variable blocks"""

    # numpy operators defer to the reflected methods below
    __array_ufunc__ = None

    terms: Dict[str, np.ndarray]
    const: np.ndarray

    @property
    def rows(self) -> int:
        return self.const.shape[0]

    @staticmethod
    def constant(vec: Union[Sequence[float], np.ndarray]) -> "Affine":
        return Affine({}, np.atleast_1d(np.asarray(vec, dtype=float)).copy())

    def __add__(self, other: Union["Affine", np.ndarray, float]) -> "Affine":
        if not isinstance(other, Affine):
            return Affine(dict(self.terms), self.const + np.asarray(other, dtype=float))
        terms = dict(self.terms)
        for name, T in other.terms.items():
            terms[name] = terms[name] + T if name in terms else T
        return Affine(terms, self.const + other.const)

    def __neg__(self) -> "Affine":
        return Affine({k: -T for k, T in self.terms.items()}, -self.const)

    def __sub__(self, other: Union["Affine", np.ndarray, float]) -> "Affine":
        return self + (-other if isinstance(other, Affine) else -np.asarray(other, dtype=float))

    def __radd__(self, other: Union[np.ndarray, float]) -> "Affine":
        return self + other

    def __rsub__(self, other: Union[np.ndarray, float]) -> "Affine":
        return (-self) + other

    def __rmatmul__(self, M: np.ndarray) -> "Affine":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return Affine({k: M @ T for k, T in self.terms.items()}, M @ self.const)

    def __mul__(self, s: float) -> "Affine":
        return Affine({k: s * T for k, T in self.terms.items()}, s * self.const)

    __rmul__ = __mul__

    @staticmethod
    def vstack(parts: Iterable["Affine"]) -> "Affine":
        parts = list(parts)
        names: List[str] = []
        for p in parts:
            names.extend(n for n in p.terms if n not in names)
        terms: Dict[str, np.ndarray] = {}
        for name in names:
            width = next(p.terms[name].shape[1] for p in parts if name in p.terms)
            terms[name] = np.vstack([p.terms.get(name, np.zeros((p.rows, width))) for p in parts])
        return Affine(terms, np.concatenate([p.const for p in parts]))


class ProgramBuilder:
    """Collects named variables and cone constraints expr in K."""

    def __init__(self) -> None:
        self._sizes: "OrderedDict[str, int]" = OrderedDict()
        self._constraints: List[Tuple[ConeBlock, Affine]] = []

    def add_variable(self, name: str, size: int) -> Affine:
        if name in self._sizes:
            raise ConeError(f"variable {name!r} already defined")
        self._sizes[name] = size
        return Affine({name: np.eye(size)}, np.zeros(size))

    def variable(self, name: str, start: int = 0, size: Optional[int] = None) -> Affine:
        total = self._sizes[name]
        size = total - start if size is None else size
        T = np.zeros((size, total))
        T[np.arange(size), start + np.arange(size)] = 1.0
        return Affine({name: T}, np.zeros(size))

    def add_cone(self, kind: str, expr: Affine) -> None:
        cls = {"zero": Zero, "nonneg": NonNeg, "soc": SecondOrder}.get(kind)
        if cls is None:
            raise ConeError(f"unknown cone kind {kind!r}")
        unknown = set(expr.terms) - set(self._sizes)
        if unknown:
            raise ConeError(f"constraint references undefined variables {sorted(unknown)}")
        self._constraints.append((cls(expr.rows), expr))

    def build(self, objective: Mapping[str, Union[Sequence[float], np.ndarray]]) -> ConicProgram:
        slices: Dict[str, slice] = {}
        offset = 0
        for name, size in self._sizes.items():
            slices[name] = slice(offset, offset + size)
            offset += size
        c = np.zeros(offset)
        for name, coef in objective.items():
            c[slices[name]] = coef
        rows = sum(expr.rows for _, expr in self._constraints)
        A = np.zeros((rows, offset))
        b = np.zeros(rows)
        r = 0
        for _, expr in self._constraints:
            for name, T in expr.terms.items():
                A[r:r + expr.rows, slices[name]] = -T
            b[r:r + expr.rows] = expr.const
            r += expr.rows
        cones = ConeSpec(tuple(blk for blk, _ in self._constraints))
        return ConicProgram(c=c, A=A, b=b, cones=cones, var_slices=slices)


# ============================================================================
# Solver
# ============================================================================

class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    MAX_ITERS = "max_iters"
    INFEASIBLE_SUSPECT = "infeasible_suspect"


@dataclass(frozen=True)
class SolverSettings:
    """ADMM parameters; ``rho`` is the initial penalty when ``adaptive_rho`` is on"""
    max_iter: int = 20000
    eps_abs: float = 1e-7
    eps_rel: float = 1e-7
    rho: float = 1.0
    over_relaxation: float = 1.5
    sigma: float = 1e-6
    eq_rho_scale: float = 1e3
    check_every: int = 10
    divergence_window: int = 500
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 50
    adaptive_rho_tolerance: float = 5.0
    rho_min: float = 1e-6
    rho_max: float = 1e6

    @classmethod
    def from_env(cls, **overrides: float) -> "SolverSettings":
        """Defaults overridden by HULLSENSE_SOLVER_* environment variables, then by kwargs"""
        env = {
            "max_iter": os.getenv("HULLSENSE_SOLVER_MAX_ITER"),
            "eps_abs": os.getenv("HULLSENSE_SOLVER_EPS_ABS"),
            "eps_rel": os.getenv("HULLSENSE_SOLVER_EPS_REL"),
            "rho": os.getenv("HULLSENSE_SOLVER_RHO"),
        }
        values: Dict[str, float] = {}
        for key, raw in env.items():
            if raw:
                values[key] = int(raw) if key == "max_iter" else float(raw)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True)
class WarmStart:
    """Primal iterate, dual iterate and penalty of an earlier solve of a same-shaped program"""
    y: np.ndarray
    dual: np.ndarray
    rho: float


@dataclass
class ConicSolution:
    y: np.ndarray
    s: np.ndarray
    dual: np.ndarray
    status: SolveStatus
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    objective: float
    rho: float = 1.0

    def warm_start(self) -> WarmStart:
        return WarmStart(y=self.y.copy(), dual=self.dual.copy(), rho=self.rho)


class ConicSolver:
    """ADMM solver owning its factorization cache; one instance per agent."""

    _CACHE_SIZE = 16

    def __init__(self, settings: Optional[SolverSettings] = None):
        self.settings = settings or SolverSettings()
        self._factors: "OrderedDict[str, Tuple]" = OrderedDict()

    def _factor(self, A: np.ndarray, rho: np.ndarray, sigma: float) -> Tuple:
        h = hashlib.blake2b(digest_size=16)
        h.update(np.asarray(A.shape).tobytes())
        h.update(A.tobytes())
        h.update(rho.tobytes())
        h.update(np.float64(sigma).tobytes())
        key = h.hexdigest()
        hit = self._factors.get(key)
        if hit is not None:
            self._factors.move_to_end(key)
            return hit
        K = sigma * np.eye(A.shape[1]) + A.T @ (rho[:, None] * A)
        factor = cho_factor(K)
        self._factors[key] = factor
        if len(self._factors) > self._CACHE_SIZE:
            self._factors.popitem(last=False)
        return factor

    def _adapted_rho(self, rho: float, r_p: float, r_d: float, scale_p: float, scale_d: float) -> Optional[float]:
        """Rebalanced penalty from the normalized residual ratio, or None to keep the current one."""
        st = self.settings
        if r_p <= 0.0 or r_d <= 0.0 or scale_p <= 0.0 or scale_d <= 0.0:
            return None
        candidate = float(np.clip(rho * math.sqrt((r_p / scale_p) / (r_d / scale_d)), st.rho_min, st.rho_max))
        if candidate > st.adaptive_rho_tolerance * rho or candidate * st.adaptive_rho_tolerance < rho:
            return candidate
        return None

    def solve(
        self,
        prog: ConicProgram,
        x0: Optional[np.ndarray] = None,
        warm: Optional[WarmStart] = None,
    ) -> ConicSolution:
        """
        Solve one program.

        ``x0`` seeds the primal iterate. ``warm`` seeds primal, dual and
        penalty from an earlier solution and is ignored when its shapes do not
        match this program.
        """
        st = self.settings
        A, b, c, cones = prog.A, prog.b, prog.c, prog.cones
        n, m = prog.n_var, b.shape[0]
        At = np.ascontiguousarray(A.T)
        eq_mask = cones.eq_mask()

        if warm is not None and (warm.y.shape != (n,) or warm.dual.shape != (m,)):
            warm = None

        def penalty(base: float) -> np.ndarray:
            vec = np.full(m, base)
            vec[eq_mask] *= st.eq_rho_scale
            return vec

        rho_base = float(np.clip(warm.rho, st.rho_min, st.rho_max)) if warm is not None else st.rho
        rho = penalty(rho_base)
        factor = self._factor(A, rho, st.sigma)

        def project_c(v: np.ndarray) -> np.ndarray:
            return b - project_cone(b - v, cones)

        if warm is not None:
            x = warm.y.astype(float, copy=True)
        else:
            x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
        if x.shape != (n,):
            raise ConeError(f"initial iterate has shape {x.shape}, expected ({n},)")
        z = project_c(A @ x)
        mu = warm.dual.astype(float, copy=True) if warm is not None else np.zeros(m)
        alpha = st.over_relaxation

        best: Optional[Tuple[float, np.ndarray, np.ndarray, np.ndarray, float, float]] = None
        window_mark: Optional[Tuple[float, float]] = None
        status = SolveStatus.MAX_ITERS
        r_p = r_d = math.inf
        it = 0

        for it in range(1, st.max_iter + 1):
            x_t = cho_solve(factor, st.sigma * x - c + At @ (rho * z - mu))
            z_t = A @ x_t
            x = alpha * x_t + (1.0 - alpha) * x
            z_relaxed = alpha * z_t + (1.0 - alpha) * z
            z_new = project_c(z_relaxed + mu / rho)
            mu = mu + rho * (z_relaxed - z_new)
            z = z_new

            if it % st.check_every and it != st.max_iter:
                continue

            Ax = A @ x
            Atmu = At @ mu
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(mu))):
                status = SolveStatus.INFEASIBLE_SUSPECT
                break
            r_p = float(np.max(np.abs(Ax - z))) if m else 0.0
            r_d = float(np.max(np.abs(c + Atmu))) if n else 0.0
            scale_p = max(float(np.max(np.abs(Ax), initial=0.0)), float(np.max(np.abs(z), initial=0.0)))
            scale_d = max(float(np.max(np.abs(Atmu), initial=0.0)), float(np.max(np.abs(c), initial=0.0)))
            eps_p = st.eps_abs + st.eps_rel * scale_p
            eps_d = st.eps_abs + st.eps_rel * scale_d

            score = max(r_p / eps_p, r_d / eps_d)
            if best is None or score < best[0]:
                best = (score, x.copy(), z.copy(), mu.copy(), r_p, r_d)
            if r_p <= eps_p and r_d <= eps_d:
                status = SolveStatus.OPTIMAL
                break

            if it % st.divergence_window == 0:
                mu_norm = float(np.linalg.norm(mu))
                if window_mark is not None:
                    prev_rp, prev_mu = window_mark
                    if r_p > 100.0 * eps_p and r_p >= 0.5 * prev_rp and mu_norm >= 1.5 * prev_mu + 1.0:
                        status = SolveStatus.INFEASIBLE_SUSPECT
                        break
                window_mark = (r_p, mu_norm)

            if st.adaptive_rho and it % st.adaptive_rho_interval == 0:
                updated = self._adapted_rho(rho_base, r_p, r_d, scale_p, scale_d)
                if updated is not None:
                    rho_base = updated
                    rho = penalty(rho_base)
                    factor = self._factor(A, rho, st.sigma)

        if status is not SolveStatus.OPTIMAL and best is not None and status is SolveStatus.MAX_ITERS:
            _, x, z, mu, r_p, r_d = best

        return ConicSolution(
            y=x,
            s=b - A @ x,
            dual=mu,
            status=status,
            primal_residual=r_p,
            dual_residual=r_d,
            gap=abs(float(c @ x + b @ mu)) if np.all(np.isfinite(mu)) else math.inf,
            iterations=it,
            objective=float(c @ x),
            rho=rho_base,
        )


def solve(
    prog: ConicProgram,
    settings: Optional[SolverSettings] = None,
    x0: Optional[np.ndarray] = None,
) -> ConicSolution:
    """One-shot solve with a fresh solver instance."""
    return ConicSolver(settings).solve(prog, x0=x0)
