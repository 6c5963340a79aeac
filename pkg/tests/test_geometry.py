from __future__ import annotations
import math

import numpy as np
import pytest

from hullsense.errors import GeometryError
from hullsense.geometry import (
    barycenter,
    consensus_distance,
    contains,
    convex_hull,
    diameter,
    dist_to_relative_boundary,
    distance_to_hull,
)

SQUARE = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]
SI_POSITIONS = [(-4.0, 2.0), (3.5, 4.0), (4.5, -3.5), (-2.5, -4.0)]


def test_unit_square_hull_is_ccw_polygon():
    hull = convex_hull(SQUARE)
    assert hull.dim == 2
    assert len(hull) == 4
    assert {tuple(v) for v in hull.vertices} == set(SQUARE)
    V = hull.vertices
    area = 0.5 * sum(V[k, 0] * V[(k + 1) % 4, 1] - V[(k + 1) % 4, 0] * V[k, 1] for k in range(4))
    assert area == pytest.approx(1.0)


def test_repeated_point_collapses_to_singleton():
    hull = convex_hull([(3.0, 3.0)] * 4)
    assert hull.dim == 0
    assert np.allclose(hull.vertices, [[3.0, 3.0]])


def test_collinear_points_give_segment():
    hull = convex_hull([(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)])
    assert hull.dim == 1
    assert np.allclose(hull.vertices, [[0.0, 0.0], [2.0, 2.0]])
    assert hull.length == pytest.approx(2.0 * math.sqrt(2.0))


def test_interior_points_are_not_vertices():
    hull = convex_hull(SQUARE + [(0.5, 0.5), (0.25, 0.75), (0.5, 0.0)])
    assert len(hull) == 4


def test_hull_rejects_bad_input():
    with pytest.raises(GeometryError):
        convex_hull([])
    with pytest.raises(GeometryError):
        convex_hull([(0.0, 0.0, 0.0)])
    with pytest.raises(GeometryError):
        convex_hull([(0.0, float("nan"))])


def test_barycenter_examples():
    assert np.allclose(barycenter(SQUARE), [0.5, 0.5])
    assert np.allclose(barycenter([(3.0, 3.0)]), [3.0, 3.0])
    assert np.allclose(barycenter(SI_POSITIONS), [0.375, -0.375])


def test_diameter_examples():
    assert diameter(SQUARE) == pytest.approx(math.sqrt(2.0))
    assert diameter(SI_POSITIONS) == pytest.approx(math.sqrt(102.5))
    assert diameter([(1.0, 2.0)] * 3) == 0.0


def test_contains_examples():
    square = convex_hull(SQUARE)
    assert contains(square, (0.0, 0.5), 1e-9)
    assert not contains(square, (2.0, 0.0), 1e-9)
    assert contains(convex_hull([(0.0, 0.0), (2.0, 2.0)]), (1.0, 1.0), 1e-9)


def test_distance_to_hull_outside_square():
    square = convex_hull(SQUARE)
    assert distance_to_hull(square, (2.0, 0.5)) == pytest.approx(1.0)
    assert distance_to_hull(square, (2.0, 2.0)) == pytest.approx(math.sqrt(2.0))
    assert distance_to_hull(square, (0.3, 0.3)) == 0.0


def test_relative_boundary_distance():
    square = convex_hull(SQUARE)
    assert dist_to_relative_boundary(square, (0.5, 0.5)) == pytest.approx(0.5)
    assert dist_to_relative_boundary(square, (0.0, 0.5)) == 0.0
    assert dist_to_relative_boundary(square, (3.0, 3.0)) == 0.0

    segment = convex_hull([(0.0, 0.0), (2.0, 0.0)])
    assert dist_to_relative_boundary(segment, (0.5, 0.0)) == pytest.approx(0.5)
    assert dist_to_relative_boundary(segment, (0.5, 0.1)) == 0.0
    assert dist_to_relative_boundary(convex_hull([(1.0, 1.0)]), (1.0, 1.0)) == 0.0


def test_consensus_distance_examples():
    assert consensus_distance([(2.0, 2.0)] * 3) == 0.0
    assert consensus_distance([(1.0, 0.0), (-1.0, 0.0)]) == pytest.approx(math.sqrt(2.0))
    assert consensus_distance(SQUARE) == pytest.approx(math.sqrt(2.0))


def test_diameter_sandwiches_consensus_distance():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(2, 7))
        z = rng.normal(scale=3.0, size=(n, 2))
        V, W = diameter(z), consensus_distance(z)
        assert W / math.sqrt(n) <= V + 1e-9
        assert V <= 2.0 * W + 1e-9
