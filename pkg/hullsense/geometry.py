"""
Planar convex hulls, barycenters, diameters and interiority measures.

Hulls carry their intrinsic dimension (0 for a point, 1 for a segment,
2 for a polygon) so relative-boundary notions work per dimension.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.spatial.distance import pdist

from .errors import GeometryError

TOL_DEDUP = 1e-9
TOL_AFFINE = 1e-9
TOL_OFF_LINE = 1e-7

PointLike = Union[Sequence[float], np.ndarray]


def as_points(points: Union[Sequence[PointLike], np.ndarray], *, planar: bool = False) -> np.ndarray:
    """Validate a point list into an (n, d) float array."""
    if len(points) == 0:
        raise GeometryError("empty point set")
    try:
        arr = np.asarray(points, dtype=float)
    except ValueError as e:
        raise GeometryError("mixed point dimensions") from e
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise GeometryError("mixed point dimensions")
    if planar and arr.shape[1] != 2:
        raise GeometryError(f"hull operations need planar points, got d={arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("non-finite coordinates")
    return arr


@dataclass(frozen=True, eq=False)
class Hull2:
    """Convex hull in the plane: CCW vertices plus its intrinsic dimension."""

    vertices: np.ndarray
    dim: int
    normals: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)

    @property
    def direction(self) -> np.ndarray:
        """Unit direction of a segment hull, from vertices[0] to vertices[1]."""
        if self.dim != 1:
            raise GeometryError("direction is only defined for segment hulls")
        d = self.vertices[1] - self.vertices[0]
        return d / np.linalg.norm(d)

    @property
    def length(self) -> float:
        if self.dim != 1:
            return 0.0
        return float(np.linalg.norm(self.vertices[1] - self.vertices[0]))

    def __len__(self) -> int:
        return len(self.vertices)


def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


def _dedup(arr: np.ndarray) -> np.ndarray:
    order = np.lexsort((arr[:, 1], arr[:, 0]))
    kept: list[np.ndarray] = []
    for p in arr[order]:
        if kept and np.min(np.max(np.abs(np.asarray(kept) - p), axis=1)) <= TOL_DEDUP:
            continue
        kept.append(p)
    return np.asarray(kept)


def _half_chain(points: np.ndarray) -> list[np.ndarray]:
    chain: list[np.ndarray] = []
    for p in points:
        # pop right turns and (near-)collinear middle points
        while len(chain) > 1 and _cross(chain[-2], chain[-1], p) <= TOL_AFFINE * np.linalg.norm(chain[-1] - chain[-2]):
            chain.pop()
        chain.append(p)
    return chain


def _segment_hull(a: np.ndarray, b: np.ndarray) -> Hull2:
    if (b[0], b[1]) < (a[0], a[1]):
        a, b = b, a
    e = (b - a) / np.linalg.norm(b - a)
    n = np.array([-e[1], e[0]])
    return Hull2(vertices=np.vstack([a, b]), dim=1, normals=n.reshape(1, 2), offsets=np.array([n @ a]))


def convex_hull(points: Union[Sequence[PointLike], np.ndarray]) -> Hull2:
    """Andrew's monotone chain with dedup and affine-rank detection."""
    pts = _dedup(as_points(points, planar=True))
    if len(pts) == 1:
        return Hull2(vertices=pts.copy(), dim=0, normals=np.zeros((0, 2)), offsets=np.zeros(0))

    p0 = pts[0]
    far = pts[np.argmax(np.linalg.norm(pts - p0, axis=1))]
    e = (far - p0) / np.linalg.norm(far - p0)
    rel = pts - p0
    off_line = np.abs(rel[:, 0] * e[1] - rel[:, 1] * e[0])
    if off_line.max() <= TOL_AFFINE:
        s = rel @ e
        return _segment_hull(pts[np.argmin(s)], pts[np.argmax(s)])

    lower = _half_chain(pts)
    upper = _half_chain(pts[::-1])
    verts = np.asarray(lower[:-1] + upper[:-1])
    if len(verts) < 3:
        return _segment_hull(verts[0], verts[-1])

    nxt = np.roll(verts, -1, axis=0)
    edges = nxt - verts
    edges /= np.linalg.norm(edges, axis=1, keepdims=True)
    normals = np.column_stack([-edges[:, 1], edges[:, 0]])
    offsets = np.einsum("ij,ij->i", normals, verts)
    return Hull2(vertices=verts, dim=2, normals=normals, offsets=offsets)


def barycenter(points: Union[Sequence[PointLike], np.ndarray]) -> np.ndarray:
    return as_points(points).mean(axis=0)


def diameter(points: Union[Sequence[PointLike], np.ndarray]) -> float:
    arr = as_points(points)
    if len(arr) < 2:
        return 0.0
    return float(pdist(arr).max())


def consensus_distance(z: Union[Sequence[PointLike], np.ndarray]) -> float:
    """Distance of the stacked state to the agreement set (all points equal)."""
    arr = as_points(z)
    return float(np.sqrt(np.sum((arr - arr.mean(axis=0)) ** 2)))


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def distance_to_hull(hull: Hull2, p: PointLike) -> float:
    q = np.asarray(p, dtype=float)
    v = hull.vertices
    if hull.dim == 0:
        return float(np.linalg.norm(q - v[0]))
    if hull.dim == 1:
        return _segment_distance(q, v[0], v[1])
    if np.all(hull.normals @ q - hull.offsets >= 0.0):
        return 0.0
    return min(_segment_distance(q, v[k], v[(k + 1) % len(v)]) for k in range(len(v)))


def contains(hull: Hull2, p: PointLike, tol: float) -> bool:
    return distance_to_hull(hull, p) <= tol


def dist_to_relative_boundary(hull: Hull2, p: PointLike) -> float:
    """Interiority measure: distance to the relative boundary, 0 outside or on it."""
    q = np.asarray(p, dtype=float)
    if hull.dim == 0:
        return 0.0
    if hull.dim == 1:
        a = hull.vertices[0]
        if abs(float(hull.normals[0] @ (q - a))) > TOL_OFF_LINE:
            return 0.0
        s = float(hull.direction @ (q - a))
        return max(0.0, min(s, hull.length - s))
    return max(0.0, float(np.min(hull.normals @ q - hull.offsets)))
