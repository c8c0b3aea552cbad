from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING
import logging

import numpy as np
import shapely
from shapely import STRtree

from app.constants import (
    BARYCENTRIC_EPS,
    DEGENERATE_TRIANGLE_AREA,
    LOGGER_NAME,
    STRICT_BARYCENTRIC_EPS,
    SUBDIVISION_MERGE_DISTANCE,
    TRAVEL_LIFT_MM,
)
from app.slicer.diagnostics import Diagnostics, warn
from app.slicer.errors import DegenerateTriangleError, OpenBoundaryError, ProjectionMissError
from app.slicer.mesh_io import build_edge_adjacency
from app.slicer.path2d import generate_walls, planar_infill, ss_offset
from app.slicer.spatial import TriangleIndex2D, barycentric_coordinates, inside_barycentric, plane_z_at, signed_area_2d
from app.slicer.surface_offset import interior_layer_surfaces
from app.slicer.types import OffsetSurface, PathKind, PathRole, PolygonChain, SurfacePatch, Toolpath, ToolpathPoint

if TYPE_CHECKING:
    from app.models import SlicerConfig


logger = logging.getLogger(LOGGER_NAME)


def barycentric(p, tri) -> tuple[float, float]:
    """
    (s, t) with p = P0 + s * (P1 - P0) + t * (P2 - P0).

    Raises:
        DegenerateTriangleError: If the triangle has no area in the plane
    """
    tri = np.asarray(tri, dtype=np.float64).reshape(3, -1)[:, :2]
    if abs(float(signed_area_2d(tri[None])[0])) <= DEGENERATE_TRIANGLE_AREA:
        raise DegenerateTriangleError("degenerate triangle", entity=tri.tolist())
    point = np.asarray(p, dtype=np.float64).reshape(1, -1)[:, :2]
    s, t = barycentric_coordinates(point, tri[:1], tri[1:2], tri[2:3])
    return float(s[0]), float(t[0])


def point_in_triangle(p, tri, eps: float = BARYCENTRIC_EPS) -> bool:
    s, t = barycentric(p, tri)
    return bool(inside_barycentric(np.array(s), np.array(t), eps))


class SurfaceProjector:
    """Lifts 2D points onto a triangulated surface along vertical rays."""

    def __init__(self, surface: OffsetSurface, *, eps: float = BARYCENTRIC_EPS):
        self.surface = surface
        self.eps = eps
        self.coords = surface.vertices[surface.triangles]
        self.index = TriangleIndex2D(self.coords, min_area=DEGENERATE_TRIANGLE_AREA)
        self.max_z = float(surface.vertices[:, 2].max()) if len(surface.vertices) else 0.0

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        Positions and tool orientations for every 2D point.

        z comes from the lowest-index triangle containing the point strictly, else the
        lowest-index one within ``eps``; the orientation averages the facet normals of
        every triangle within ``eps``.

        Raises:
            ProjectionMissError: If a point lies outside every triangle
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if not len(points):
            return np.zeros((0, 3)), np.zeros((0, 3))

        point_idx, tri_idx, s, t = self.index.containing(points, self.eps)
        found = np.zeros(len(points), dtype=bool)
        found[point_idx] = True
        if not found.all():
            missing = int(np.flatnonzero(~found)[0])
            raise ProjectionMissError(
                "projection miss",
                entity=f"surface of patch {self.surface.source_patch_id} at ({points[missing, 0]:.6f}, {points[missing, 1]:.6f})",
            )

        loose = ~inside_barycentric(s, t, STRICT_BARYCENTRIC_EPS)
        order = np.lexsort((tri_idx, loose, point_idx))
        _, first = np.unique(point_idx[order], return_index=True)
        chosen = order[first]

        z = plane_z_at(self.coords[tri_idx[chosen]], s[chosen], t[chosen])
        positions = np.column_stack([points, z])

        sums = np.zeros((len(points), 3))
        np.add.at(sums, point_idx, self.surface.facet_normals[tri_idx])
        orientations = sums / np.linalg.norm(sums, axis=1)[:, None]
        return positions, orientations


def project_point(p, surface: OffsetSurface) -> ToolpathPoint:
    positions, orientations = SurfaceProjector(surface).project(np.asarray(p, dtype=np.float64)[:2])
    return ToolpathPoint(tuple(map(float, positions[0])), tuple(map(float, orientations[0])), True)


class SharedEdgeIndex:
    """xy projections of the edges shared by two triangles of a surface."""

    def __init__(self, surface: OffsetSurface | SurfacePatch):
        adjacency = build_edge_adjacency(surface.triangles)
        edges = np.array([edge for edge, incident in adjacency.items() if len(incident) == 2], dtype=np.int64).reshape(-1, 2)
        segments = surface.vertices[edges][:, :, :2] if len(edges) else np.zeros((0, 2, 2))
        keep = np.linalg.norm(segments[:, 1] - segments[:, 0], axis=1) > 0 if len(segments) else np.zeros(0, dtype=bool)
        self.segments = segments[keep]
        self._tree = STRtree(shapely.linestrings(self.segments)) if len(self.segments) else None

    def __len__(self) -> int:
        return int(len(self.segments))

    def crossings(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Sorted parameters t in (0, 1) where a + t * (b - a) meets a shared edge."""
        if self._tree is None:
            return np.zeros(0)
        candidates = self._tree.query(shapely.linestrings([a, b]), predicate="intersects")
        if not len(candidates):
            return np.zeros(0)

        c = self.segments[candidates, 0]
        e = self.segments[candidates, 1]
        direction = b - a
        edge = e - c
        denom = direction[0] * edge[:, 1] - direction[1] * edge[:, 0]
        valid = np.abs(denom) > 1e-15
        offset = c - a
        safe = np.where(valid, denom, 1.0)
        t = (offset[:, 0] * edge[:, 1] - offset[:, 1] * edge[:, 0]) / safe
        u = (offset[:, 0] * direction[1] - offset[:, 1] * direction[0]) / safe
        hit = valid & (t > 1e-12) & (t < 1.0 - 1e-12) & (u >= -1e-12) & (u <= 1.0 + 1e-12)
        return np.sort(t[hit])


def subdivide_at_shared_edges(path: np.ndarray, shared_edges: SharedEdgeIndex) -> np.ndarray:
    """Insert a point wherever a path segment crosses a shared edge, so every piece lies over one triangle."""
    path = np.asarray(path, dtype=np.float64).reshape(-1, 2)
    if len(path) < 2:
        return path

    points: list[np.ndarray] = [path[0]]
    for a, b in zip(path[:-1], path[1:]):
        for t in shared_edges.crossings(a, b):
            candidate = a + t * (b - a)
            if np.linalg.norm(candidate - points[-1]) > SUBDIVISION_MERGE_DISTANCE:
                points.append(candidate)
        if np.linalg.norm(b - points[-1]) > SUBDIVISION_MERGE_DISTANCE:
            points.append(b)
        else:
            points[-1] = b
    return np.array(points)


@dataclass(frozen=True, eq=False)
class NonplanarLayer:
    """Walls and infill of one offset surface of a patch."""

    patch_id: int
    index: int
    surface: OffsetSurface
    walls: tuple[Toolpath, ...] = ()
    infill: tuple[Toolpath, ...] = ()

    @property
    def toolpaths(self) -> list[Toolpath]:
        return [*self.walls, *self.infill]


def _conformal_toolpath(
    path: np.ndarray,
    role: PathRole,
    layer_index: int,
    projector: SurfaceProjector,
    shared_edges: SharedEdgeIndex,
) -> Toolpath:
    dense = subdivide_at_shared_edges(path, shared_edges)
    positions, orientations = projector.project(dense)

    lift = projector.max_z + TRAVEL_LIFT_MM
    start = np.array([positions[0, 0], positions[0, 1], lift])
    end = np.array([positions[-1, 0], positions[-1, 1], lift])
    extruding = np.ones(len(positions) + 2, dtype=bool)
    extruding[:2] = False
    extruding[-1] = False
    return Toolpath(
        role=role,
        kind=PathKind.NONPLANAR,
        layer=layer_index,
        positions=np.vstack([start, positions, end]),
        orientations=np.vstack([orientations[:1], orientations, orientations[-1:]]),
        extruding=extruding,
        patch=projector.surface.source_patch_id,
    )


def nonplanar_walls(
    patch_boundary: list[PolygonChain],
    surface: OffsetSurface,
    config: SlicerConfig,
    *,
    layer_index: int = 0,
    projector: SurfaceProjector | None = None,
    shared_edges: SharedEdgeIndex | None = None,
    diagnostics: Diagnostics | None = None,
) -> list[Toolpath]:
    """Walls offset from the surface footprint and lifted onto the surface, outer to inner."""
    projector = projector or SurfaceProjector(surface)
    shared_edges = shared_edges or SharedEdgeIndex(surface)

    wall_set = generate_walls(patch_boundary, config)
    if not wall_set.walls:
        warn(diagnostics, "[patch %d layer %d] footprint too small for a wall", surface.source_patch_id, layer_index)
        return []

    toolpaths: list[Toolpath] = []
    for k, wall in enumerate(wall_set.walls):
        role = PathRole.OUTER_WALL if k == 0 else PathRole.INNER_WALL
        for chain in wall:
            toolpaths.append(_conformal_toolpath(chain.as_polyline(), role, layer_index, projector, shared_edges))
    return toolpaths


def nonplanar_infill(
    patch_boundary: list[PolygonChain],
    surface: OffsetSurface,
    config: SlicerConfig,
    layer_index: int,
    *,
    projector: SurfaceProjector | None = None,
    shared_edges: SharedEdgeIndex | None = None,
) -> list[Toolpath]:
    """Zigzag infill inside the innermost wall, subdivided at shared edges and lifted."""
    if not patch_boundary:
        return []
    projector = projector or SurfaceProjector(surface)
    shared_edges = shared_edges or SharedEdgeIndex(surface)

    infill_boundary = ss_offset(patch_boundary, (0.5 + config.wall_count) * config.extrusion_width)
    return [
        _conformal_toolpath(path.points, PathRole.INFILL, layer_index, projector, shared_edges)
        for path in planar_infill(infill_boundary, config, layer_index)
    ]


def generate_nonplanar_layers(
    patch: SurfacePatch,
    config: SlicerConfig,
    *,
    surfaces: list[OffsetSurface] | tuple[OffsetSurface, ...] | None = None,
    first_layer_index: int = 0,
    diagnostics: Diagnostics | None = None,
) -> list[NonplanarLayer]:
    """
    Walls then infill on every interior surface of a patch, bottom-up.

    The 2D boundary is recomputed from each surface's own footprint; layer indices
    start at ``first_layer_index`` so the infill angle keeps alternating after the
    planar layers.
    """
    if surfaces is None:
        surfaces = interior_layer_surfaces(patch, config, diagnostics=diagnostics)

    layers: list[NonplanarLayer] = []
    for k, surface in enumerate(surfaces):
        index = first_layer_index + k
        try:
            boundary = list(surface.boundary)
        except OpenBoundaryError as e:
            warn(diagnostics, "[patch %d layer %d] skipped: %s", patch.patch_id, index, e.reason)
            continue

        projector = SurfaceProjector(surface)
        shared_edges = SharedEdgeIndex(surface)
        walls = nonplanar_walls(
            boundary,
            surface,
            config,
            layer_index=index,
            projector=projector,
            shared_edges=shared_edges,
            diagnostics=diagnostics,
        )
        infill = nonplanar_infill(boundary, surface, config, index, projector=projector, shared_edges=shared_edges)
        layers.append(NonplanarLayer(patch.patch_id, index, surface, tuple(walls), tuple(infill)))
        logger.info(
            "[patch %d layer %d] %d wall paths, %d infill paths at offset %g",
            patch.patch_id,
            index,
            len(walls),
            len(infill),
            surface.offset_distance,
        )
    return layers
