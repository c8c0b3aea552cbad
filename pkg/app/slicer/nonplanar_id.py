from __future__ import annotations

from dataclasses import replace
from typing import TYPE_CHECKING
import logging
import math

import numpy as np
import shapely
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from shapely import STRtree

from app.constants import LOGGER_NAME, MIN_PATCH_TRIANGLES, RAY_EPSILON
from app.slicer.diagnostics import Diagnostics, warn
from app.slicer.errors import OpenBoundaryError
from app.slicer.spatial import TriangleIndex2D, plane_z_at
from app.slicer.types import PolygonChain, SurfacePatch, TriangleMesh

if TYPE_CHECKING:
    from app.models import SlicerConfig


logger = logging.getLogger(LOGGER_NAME)

OCCLUSION_CONTAINMENT_EPS = 1e-9
COLLISION_CHUNK = 2048


def threshold_angle(layer_height: float, extrusion_width: float) -> float:
    """Surface inclination (degrees) below which a non-planar layer beats the planar staircase."""
    if layer_height <= 0 or extrusion_width <= 0:
        raise ValueError(
            f"Layer height and extrusion width must be positive, got {layer_height} and {extrusion_width}"
        )
    return math.degrees(math.atan(layer_height / extrusion_width))


def classify_triangles(normals: np.ndarray, threshold_deg: float) -> np.ndarray:
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    lengths = np.linalg.norm(normals, axis=1)
    nz = np.divide(normals[:, 2], lengths, out=np.zeros(len(normals)), where=lengths > 0)
    angle = np.degrees(np.arccos(np.clip(nz, -1.0, 1.0)))
    return (nz > 0) & (angle < threshold_deg)


def classify_triangle(facet_normal, threshold_deg: float) -> bool:
    return bool(classify_triangles(np.asarray(facet_normal).reshape(1, 3), threshold_deg)[0])


def occluded_vertices(points: np.ndarray, mesh: TriangleMesh, *, index: TriangleIndex2D | None = None) -> np.ndarray:
    """Whether a vertical ray from each point (lifted by the ray epsilon) hits a triangle above it."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    index = index or TriangleIndex2D(mesh.triangle_coordinates)
    point_idx, tri_idx, s, t = index.containing(points[:, :2], OCCLUSION_CONTAINMENT_EPS)

    occluded = np.zeros(len(points), dtype=bool)
    if len(point_idx):
        z = plane_z_at(mesh.triangle_coordinates[tri_idx], s, t)
        hit = z > points[point_idx, 2] + RAY_EPSILON
        occluded[point_idx[hit]] = True
    return occluded


def occlusion_test(vertex, mesh: TriangleMesh) -> bool:
    return bool(occluded_vertices(np.asarray(vertex).reshape(1, 3), mesh)[0])


def triangle_box_overlap(triangles: np.ndarray, half_extents: np.ndarray) -> np.ndarray:
    """
    Separating axis test of triangles against an origin-centred axis-aligned box.

    Args:
        triangles: (k, 3, 3) triangle corners relative to the box centre
        half_extents: (3,) or (k, 3) box half sizes

    Returns:
        Boolean array, True where the triangle touches or enters the box
    """
    tri = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    half = np.broadcast_to(np.asarray(half_extents, dtype=np.float64), (len(tri), 3))
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]

    separated = ((tri.min(axis=1) > half) | (tri.max(axis=1) < -half)).any(axis=1)

    edges = (v1 - v0, v2 - v1, v0 - v2)
    normal = np.cross(edges[0], edges[1])
    distance = np.einsum("ij,ij->i", normal, v0)
    radius = (np.abs(normal) * half).sum(axis=1)
    separated |= np.abs(distance) > radius

    units = np.eye(3)
    for edge in edges:
        for unit in units:
            axis = np.cross(np.broadcast_to(unit, edge.shape), edge)
            p0 = np.einsum("ij,ij->i", axis, v0)
            p1 = np.einsum("ij,ij->i", axis, v1)
            p2 = np.einsum("ij,ij->i", axis, v2)
            radius = (np.abs(axis) * half).sum(axis=1)
            low = np.minimum(np.minimum(p0, p1), p2)
            high = np.maximum(np.maximum(p0, p1), p2)
            separated |= (low > radius) | (high < -radius)

    return ~separated


def colliding_vertices(
    points: np.ndarray,
    mesh: TriangleMesh,
    extruder_box: tuple[float, float, float],
    *,
    excluded: np.ndarray | None = None,
) -> np.ndarray:
    """Whether the extruder box, nozzle tip at each point, overlaps a non-excluded triangle."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    width, depth, height = (float(v) for v in extruder_box)
    colliding = np.zeros(len(points), dtype=bool)
    if min(width, depth, height) <= 0 or not len(points):
        return colliding

    active = np.arange(mesh.triangle_count) if excluded is None else np.flatnonzero(~np.asarray(excluded, dtype=bool))
    if not len(active):
        return colliding

    coords = mesh.triangle_coordinates
    tree = STRtree(shapely.multipoints(coords[active][:, :, :2]))
    half = np.array([width / 2.0, depth / 2.0, height / 2.0])
    centres = points + np.array([0.0, 0.0, RAY_EPSILON + height / 2.0])

    for start in range(0, len(points), COLLISION_CHUNK):
        chunk = slice(start, start + COLLISION_CHUNK)
        lo = centres[chunk] - half
        hi = centres[chunk] + half
        pairs = tree.query(shapely.box(lo[:, 0], lo[:, 1], hi[:, 0], hi[:, 1]))
        if not pairs.shape[1]:
            continue
        point_idx = pairs[0]
        tri_idx = active[pairs[1]]
        tri_z = coords[tri_idx][:, :, 2]
        in_range = (tri_z.max(axis=1) >= lo[point_idx, 2]) & (tri_z.min(axis=1) <= hi[point_idx, 2])
        point_idx = point_idx[in_range]
        tri_idx = tri_idx[in_range]
        if not len(point_idx):
            continue
        relative = coords[tri_idx] - centres[chunk][point_idx][:, None, :]
        hit = triangle_box_overlap(relative, half)
        colliding[start + point_idx[hit]] = True

    return colliding


def collision_test(vertex, mesh: TriangleMesh, extruder_box: tuple[float, float, float], *, excluded: np.ndarray | None = None) -> bool:
    return bool(colliding_vertices(np.asarray(vertex).reshape(1, 3), mesh, extruder_box, excluded=excluded)[0])


def _edge_connected_components(mesh: TriangleMesh, selected: np.ndarray) -> list[np.ndarray]:
    chosen = np.flatnonzero(selected)
    if not len(chosen):
        return []
    local = np.full(mesh.triangle_count, -1, dtype=np.int64)
    local[chosen] = np.arange(len(chosen))

    rows: list[int] = []
    cols: list[int] = []
    for incident in mesh.edge_adjacency.values():
        members = [local[t] for t in incident if local[t] >= 0]
        for a, b in zip(members, members[1:]):
            rows.append(a)
            cols.append(b)

    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(chosen), len(chosen)))
    count, labels = connected_components(graph, directed=False)
    return [chosen[labels == label] for label in range(count)]


def surface_boundary(vertices: np.ndarray, triangles: np.ndarray, *, entity: object = None) -> list[PolygonChain]:
    """Footprint chains of a triangulated surface: its single-use edges projected to xy."""
    from app.slicer.planar_slice import identify_holes, sort_segments

    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    edges = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    keys = np.sort(edges, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    boundary = edges[counts[inverse.reshape(-1)] == 1]
    if not len(boundary):
        raise OpenBoundaryError("surface has no boundary edges", entity=entity)

    segments = np.asarray(vertices, dtype=np.float64)[boundary][:, :, :2]
    chains = sort_segments(segments)
    if any(not chain.closed for chain in chains):
        raise OpenBoundaryError("open non-planar boundary", entity=entity)
    return identify_holes(chains)


def extract_boundary(patch: SurfacePatch) -> list[PolygonChain]:
    return surface_boundary(patch.vertices, patch.triangles, entity=f"patch {patch.patch_id}")


def _make_patch(mesh: TriangleMesh, patch_id: int, triangle_ids: np.ndarray) -> SurfacePatch:
    triangles = mesh.triangles[triangle_ids]
    source_vertices, local = np.unique(triangles, return_inverse=True)
    return SurfacePatch(
        patch_id=patch_id,
        vertices=mesh.vertices[source_vertices],
        triangles=local.reshape(-1, 3),
        facet_normals=mesh.facet_normals[triangle_ids],
        source_triangles=triangle_ids,
        source_vertices=source_vertices,
    )


def extract_nonplanar_surface(
    mesh: TriangleMesh,
    config: SlicerConfig,
    *,
    diagnostics: Diagnostics | None = None,
) -> list[SurfacePatch]:
    """
    Find the surface patches that will be printed as non-planar layers.

    Args:
        mesh: Welded mesh
        config: Slicer configuration (threshold angle, extruder box, checks)
        diagnostics: Optional warning collector

    Returns:
        Patches ordered by lowest minimum z, ids assigned in that order
    """
    candidates = classify_triangles(mesh.facet_normals, config.threshold_angle_deg)
    if not candidates.any():
        logger.info("No triangles below the %.4f deg threshold", config.threshold_angle_deg)
        return []

    candidate_vertices = np.unique(mesh.triangles[candidates])
    rejected = np.zeros(mesh.vertex_count, dtype=bool)
    if config.occlusion_check:
        occluded = occluded_vertices(mesh.vertices[candidate_vertices], mesh)
        rejected[candidate_vertices[occluded]] = True
    if config.collision_check:
        box = config.extruder_box
        colliding = colliding_vertices(
            mesh.vertices[candidate_vertices],
            mesh,
            (box.width, box.depth, box.height),
            excluded=candidates,
        )
        rejected[candidate_vertices[colliding]] = True

    selected = candidates & ~rejected[mesh.triangles].any(axis=1)
    components = _edge_connected_components(mesh, selected)
    kept = [component for component in components if len(component) >= MIN_PATCH_TRIANGLES]
    discarded = sum(len(component) for component in components if len(component) < MIN_PATCH_TRIANGLES)

    kept.sort(key=lambda ids: (float(mesh.vertices[mesh.triangles[ids]][:, :, 2].min()), int(ids.min())))

    patches: list[SurfacePatch] = []
    for triangle_ids in kept:
        patch = _make_patch(mesh, len(patches), triangle_ids)
        try:
            boundary = extract_boundary(patch)
        except OpenBoundaryError as e:
            warn(diagnostics, "[patch %d] skipped: %s", patch.patch_id, e.reason)
            continue
        patches.append(replace(patch, boundary=tuple(boundary)))

    logger.info(
        "Non-planar detection: %d candidate triangles, %d rejected vertices, %d patches, %d triangles in discarded small components",
        int(candidates.sum()),
        int(rejected.sum()),
        len(patches),
        discarded,
    )
    return patches

