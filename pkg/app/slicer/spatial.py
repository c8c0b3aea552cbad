from __future__ import annotations

import numpy as np
import shapely
from shapely import STRtree


def triangle_normals(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals from the right-hand winding and twice the triangle areas."""
    cross = np.cross(coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0])
    norms = np.linalg.norm(cross, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return cross / safe[:, None], norms


def signed_area_2d(coords: np.ndarray) -> np.ndarray:
    """Signed xy areas of triangles given as (m, 3, >=2) coordinates."""
    a = coords[:, 0, :2]
    b = coords[:, 1, :2]
    c = coords[:, 2, :2]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def barycentric_coordinates(points: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve p = a + s*(b - a) + t*(c - a) row by row.

    Degenerate rows yield NaN.
    """
    u = b - a
    v = c - a
    w = points - a
    uu = np.einsum("ij,ij->i", u, u)
    uv = np.einsum("ij,ij->i", u, v)
    vv = np.einsum("ij,ij->i", v, v)
    wu = np.einsum("ij,ij->i", w, u)
    wv = np.einsum("ij,ij->i", w, v)
    denom = uv * uv - uu * vv
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (uv * wv - vv * wu) / denom
        t = (uv * wu - uu * wv) / denom
    return s, t


def inside_barycentric(s: np.ndarray, t: np.ndarray, eps: float) -> np.ndarray:
    return (s >= -eps) & (t >= -eps) & (s + t <= 1.0 + eps)


def plane_z_at(coords: np.ndarray, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """z of the triangle plane at barycentric (s, t); coords is (k, 3, 3)."""
    z = coords[:, :, 2]
    return z[:, 0] + s * (z[:, 1] - z[:, 0]) + t * (z[:, 2] - z[:, 0])


class TriangleIndex2D:
    """STRtree over the xy projections of non-vertical triangles."""

    def __init__(self, coords: np.ndarray, *, min_area: float = 1e-12):
        self.coords = np.asarray(coords, dtype=np.float64)
        area = np.abs(signed_area_2d(self.coords)) if len(self.coords) else np.zeros(0)
        self.indices = np.flatnonzero(area > min_area)
        xy = self.coords[self.indices][:, :, :2]
        if len(xy):
            edges = np.linalg.norm(xy - np.roll(xy, -1, axis=1), axis=2)
            self.max_edge = float(edges.max())
            self._tree = STRtree(shapely.polygons(shapely.linearrings(xy)))
        else:
            self.max_edge = 0.0
            self._tree = None

    def __len__(self) -> int:
        return int(len(self.indices))

    def candidates(self, points: np.ndarray, distance: float) -> tuple[np.ndarray, np.ndarray]:
        """(point index, triangle index) pairs whose xy triangle lies within ``distance``, sorted."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if self._tree is None or not len(points):
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty
        pairs = self._tree.query(shapely.points(points), predicate="dwithin", distance=distance)
        point_idx = pairs[0].astype(np.int64)
        tri_idx = self.indices[pairs[1]].astype(np.int64)
        order = np.lexsort((tri_idx, point_idx))
        return point_idx[order], tri_idx[order]

    def containing(self, points: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Pairs (point, triangle, s, t) passing the relaxed barycentric inclusion test."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        distance = eps * self.max_edge + 1e-9
        point_idx, tri_idx = self.candidates(points, distance)
        if not len(point_idx):
            return point_idx, tri_idx, np.zeros(0), np.zeros(0)
        tri_xy = self.coords[tri_idx][:, :, :2]
        s, t = barycentric_coordinates(points[point_idx], tri_xy[:, 0], tri_xy[:, 1], tri_xy[:, 2])
        keep = inside_barycentric(s, t, eps)
        return point_idx[keep], tri_idx[keep], s[keep], t[keep]
