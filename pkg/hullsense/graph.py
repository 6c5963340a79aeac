"""
Directed communication schedules. An edge (k, i) means agent k's sample is
visible to agent i, so the in-neighbors of i are {k : (k, i) in E(j)}.
Agent ids run from 1 to node_count.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Literal, Sequence, Tuple

from .errors import GraphError

Edge = Tuple[int, int]
EdgeSet = FrozenSet[Edge]


def edge_set(edges: Iterable[Sequence[int]]) -> EdgeSet:
    out = set()
    for e in edges:
        if len(e) != 2:
            raise GraphError(f"edge {tuple(e)} must be a (from, to) pair")
        out.add((int(e[0]), int(e[1])))
    return frozenset(out)


@dataclass(frozen=True)
class GraphSchedule:
    node_count: int
    slots: Tuple[EdgeSet, ...]
    mode: Literal["static", "periodic"] = "static"

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise GraphError(f"node_count must be >= 1, got {self.node_count}")
        if not self.slots:
            raise GraphError("schedule needs at least one edge set")
        if self.mode == "static" and len(self.slots) != 1:
            raise GraphError("static schedules have exactly one edge set")
        for slot in self.slots:
            for k, i in slot:
                if not (1 <= k <= self.node_count and 1 <= i <= self.node_count):
                    raise GraphError(f"edge ({k},{i}) references an unknown agent", node_count=self.node_count)
                if k == i:
                    raise GraphError(f"self-loop on agent {k}")

    @property
    def period(self) -> int:
        return len(self.slots)

    def edges_at(self, j: int) -> EdgeSet:
        if j < 0:
            raise GraphError(f"outer step must be >= 0, got {j}")
        return self.slots[j % self.period]


def static(node_count: int, edges: Iterable[Sequence[int]]) -> GraphSchedule:
    return GraphSchedule(node_count=node_count, slots=(edge_set(edges),), mode="static")


def periodic(node_count: int, slots: Sequence[Iterable[Sequence[int]]]) -> GraphSchedule:
    return GraphSchedule(node_count=node_count, slots=tuple(edge_set(s) for s in slots), mode="periodic")


def ring(node_count: int) -> GraphSchedule:
    """Directed ring 1 -> 2 -> ... -> l -> 1."""
    return static(node_count, [(k, k % node_count + 1) for k in range(1, node_count + 1)])


def complete(node_count: int) -> GraphSchedule:
    return static(node_count, [(k, i) for k in range(1, node_count + 1) for i in range(1, node_count + 1) if k != i])


def neighbors(sched: GraphSchedule, i: int, j: int) -> FrozenSet[int]:
    if not 1 <= i <= sched.node_count:
        raise GraphError(f"unknown agent id {i}", node_count=sched.node_count)
    return frozenset(k for k, to in sched.edges_at(j) if to == i)


def union_graph(sched: GraphSchedule, j: int, B: int) -> EdgeSet:
    if B < 1:
        raise GraphError(f"window must be >= 1, got {B}")
    out: set[Edge] = set()
    for s in range(j, j + B):
        out |= sched.edges_at(s)
    return frozenset(out)


def has_spanning_tree(edges: EdgeSet, node_count: int) -> bool:
    """True iff some root reaches every node along directed edges."""
    adjacency: dict[int, list[int]] = {v: [] for v in range(1, node_count + 1)}
    for k, i in edges:
        adjacency.setdefault(k, []).append(i)

    for root in range(1, node_count + 1):
        seen = {root}
        stack = [root]
        while stack:
            v = stack.pop()
            for w in adjacency.get(v, ()):
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) == node_count:
            return True
    return False


def check_joint_connectivity(sched: GraphSchedule, B: int, horizon: int) -> bool:
    """Every window [j, j+B-1] with j in [0, horizon] has a spanning tree."""
    # windows repeat with the schedule period
    last = min(horizon, sched.period - 1)
    return all(has_spanning_tree(union_graph(sched, j, B), sched.node_count) for j in range(last + 1))
