from __future__ import annotations

import numpy as np
import pytest

from hullsense import graph
from hullsense.errors import GraphError

from oracles import reachability_matrix


def test_complete_graph_neighbors():
    k4 = graph.complete(4)
    for i in range(1, 5):
        assert graph.neighbors(k4, i, 0) == frozenset({1, 2, 3, 4} - {i})


def test_ring_neighbors_follow_edge_direction():
    ring = graph.ring(4)
    assert graph.neighbors(ring, 2, 0) == frozenset({1})
    assert graph.neighbors(ring, 1, 7) == frozenset({4})


def test_empty_graph_has_no_neighbors():
    empty = graph.static(3, [])
    assert graph.neighbors(empty, 1, 0) == frozenset()


def test_unknown_agent_rejected():
    with pytest.raises(GraphError):
        graph.neighbors(graph.ring(3), 4, 0)
    with pytest.raises(GraphError):
        graph.static(3, [(1, 5)])
    with pytest.raises(GraphError):
        graph.static(3, [(2, 2)])


def test_union_graph_windows():
    ring = graph.ring(4)
    assert graph.union_graph(ring, 3, 5) == ring.edges_at(0)

    alt = graph.periodic(2, [[(1, 2)], [(2, 1)]])
    assert graph.union_graph(alt, 0, 2) == frozenset({(1, 2), (2, 1)})
    assert graph.union_graph(alt, 1, 1) == frozenset({(2, 1)})

    slots = [[(1, 2)], [(2, 3)], [(3, 1)]]
    sched = graph.periodic(3, slots)
    assert graph.union_graph(sched, 2, 3) == frozenset({(1, 2), (2, 3), (3, 1)})


def test_spanning_tree_examples():
    assert graph.has_spanning_tree(graph.complete(4).edges_at(0), 4)
    assert not graph.has_spanning_tree(frozenset({(1, 2), (2, 1), (3, 4), (4, 3)}), 4)
    assert graph.has_spanning_tree(graph.ring(4).edges_at(0), 4)


def test_joint_connectivity_examples():
    assert graph.check_joint_connectivity(graph.ring(4), 1, 10)
    alt = graph.periodic(2, [[(1, 2)], [(2, 1)]])
    assert graph.check_joint_connectivity(alt, 1, 10)
    gap = graph.periodic(3, [[(1, 2), (2, 3)], []])
    assert not graph.check_joint_connectivity(gap, 1, 10)
    assert graph.check_joint_connectivity(gap, 2, 10)


def test_spanning_tree_matches_reachability_oracle():
    rng = np.random.default_rng(11)
    for _ in range(300):
        n = int(rng.integers(2, 7))
        pairs = [(k, i) for k in range(1, n + 1) for i in range(1, n + 1) if k != i]
        mask = rng.random(len(pairs)) < rng.uniform(0.05, 0.5)
        edges = frozenset(p for p, keep in zip(pairs, mask) if keep)
        assert graph.has_spanning_tree(edges, n) == reachability_matrix(edges, n)
