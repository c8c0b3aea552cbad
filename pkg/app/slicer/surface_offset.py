from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING
import logging

import numpy as np
from scipy.spatial import cKDTree

from app.constants import LOGGER_NAME, OFFSET_MIN_TRIANGLE_AREA
from app.slicer.diagnostics import Diagnostics, warn
from app.slicer.errors import DegenerateNormalError, OffsetLimitError, OpenBoundaryError
from app.slicer.mesh_io import mesh_from_indexed, write_stl
from app.slicer.spatial import triangle_normals
from app.slicer.types import OffsetSurface, SurfacePatch, TriangleMesh

if TYPE_CHECKING:
    from app.models import SlicerConfig


logger = logging.getLogger(LOGGER_NAME)

_CROSSING_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class PatchStack:
    """A patch with its usable interior layer surfaces (bottom-up) and the slab removed from the planar body."""

    patch: SurfacePatch
    surfaces: tuple[OffsetSurface, ...]
    space: TriangleMesh


def vertex_normals(patch: SurfacePatch) -> np.ndarray:
    """Unit vertex normals indexed like ``patch.vertices``: normalized sum of incident facet normals."""
    sums = np.zeros((len(patch.vertices), 3))
    for corner in range(3):
        np.add.at(sums, patch.triangles[:, corner], patch.facet_normals)

    lengths = np.linalg.norm(sums, axis=1)
    used = np.zeros(len(patch.vertices), dtype=bool)
    used[patch.triangles.reshape(-1)] = True
    degenerate = np.flatnonzero(used & (lengths < 1e-12))
    if len(degenerate):
        vertex = int(patch.source_vertices[degenerate[0]]) if len(patch.source_vertices) else int(degenerate[0])
        raise DegenerateNormalError("zero-length vertex normal sum", entity=f"patch {patch.patch_id} vertex {vertex}")

    return sums / np.where(lengths > 0, lengths, 1.0)[:, None]


def _segments_cross_triangles(segment_start: np.ndarray, segment_end: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Strict segment/triangle crossings (Moller-Trumbore), one test per row."""
    direction = segment_end - segment_start
    edge1 = triangles[:, 1] - triangles[:, 0]
    edge2 = triangles[:, 2] - triangles[:, 0]
    h = np.cross(direction, edge2)
    a = np.einsum("ij,ij->i", edge1, h)
    valid = np.abs(a) > 1e-15
    f = np.divide(1.0, a, out=np.zeros_like(a), where=valid)
    s = segment_start - triangles[:, 0]
    u = f * np.einsum("ij,ij->i", s, h)
    q = np.cross(s, edge1)
    v = f * np.einsum("ij,ij->i", direction, q)
    t = f * np.einsum("ij,ij->i", edge2, q)
    return (
        valid
        & (u > _CROSSING_EPS)
        & (v > _CROSSING_EPS)
        & (u + v < 1.0 - _CROSSING_EPS)
        & (t > _CROSSING_EPS)
        & (t < 1.0 - _CROSSING_EPS)
    )


def find_self_intersections(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Pairs (i, j) of triangles sharing no vertex that intersect each other."""
    coords = vertices[triangles]
    if len(coords) < 2:
        return np.zeros((0, 2), dtype=np.int64)

    centroids = coords.mean(axis=1)
    radius = float(np.linalg.norm(coords - centroids[:, None, :], axis=2).max())
    pairs = cKDTree(centroids).query_pairs(2.0 * radius + 1e-12, output_type="ndarray")
    if not len(pairs):
        return np.zeros((0, 2), dtype=np.int64)

    i, j = pairs[:, 0], pairs[:, 1]
    lo = coords.min(axis=1)
    hi = coords.max(axis=1)
    boxes_overlap = ((lo[i] <= hi[j]) & (lo[j] <= hi[i])).all(axis=1)
    shares_vertex = (triangles[i][:, :, None] == triangles[j][:, None, :]).any(axis=(1, 2))
    keep = boxes_overlap & ~shares_vertex
    i, j = i[keep], j[keep]
    if not len(i):
        return np.zeros((0, 2), dtype=np.int64)

    a, b = coords[i], coords[j]
    hit = np.zeros(len(i), dtype=bool)
    for start, end in ((0, 1), (1, 2), (2, 0)):
        hit |= _segments_cross_triangles(a[:, start], a[:, end], b)
        hit |= _segments_cross_triangles(b[:, start], b[:, end], a)

    found = np.stack([i[hit], j[hit]], axis=1)
    return found[np.lexsort((found[:, 1], found[:, 0]))] if len(found) else found


def offset_patch(patch: SurfacePatch, d: float, *, allow_self_intersection: bool = False) -> OffsetSurface:
    """
    Move every patch vertex by ``d`` along its vertex normal (negative = into the object).

    Raises:
        OffsetLimitError: If an offset triangle degenerates, flips or the surface intersects itself
    """
    normals = vertex_normals(patch)
    moved = patch.vertices + d * normals
    entity = f"patch {patch.patch_id} offset {d:g}"

    unit, double_area = triangle_normals(moved[patch.triangles])
    source_unit, _ = triangle_normals(patch.vertices[patch.triangles])

    degenerate = np.flatnonzero(0.5 * double_area < OFFSET_MIN_TRIANGLE_AREA)
    if len(degenerate):
        raise OffsetLimitError(f"offset limit reached: triangle {int(degenerate[0])} degenerates", entity=entity)

    flipped = np.flatnonzero(np.einsum("ij,ij->i", unit, source_unit) <= 0)
    if len(flipped):
        raise OffsetLimitError(f"offset limit reached: triangle {int(flipped[0])} flips", entity=entity)

    intersections = find_self_intersections(moved, patch.triangles)
    if len(intersections) and not allow_self_intersection:
        first, second = (int(v) for v in intersections[0])
        raise OffsetLimitError(
            f"offset limit reached: triangles {first} and {second} intersect",
            entity=entity,
        )

    return OffsetSurface(
        source_patch_id=patch.patch_id,
        offset_distance=float(d),
        vertices=moved,
        triangles=patch.triangles,
        vertex_normals=normals,
        facet_normals=unit,
        self_intersecting=bool(len(intersections)),
    )


def _directed_boundary_edges(triangles: np.ndarray) -> np.ndarray:
    edges = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    keys = np.sort(edges, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return edges[counts[inverse.reshape(-1)] == 1]


def build_nonplanar_space(patch: SurfacePatch, bottom: OffsetSurface) -> TriangleMesh:
    """Close the patch and its bottom offset into a watertight slab joined by side walls."""
    entity = f"patch {patch.patch_id}"
    if bottom.self_intersecting:
        raise OffsetLimitError("self-intersecting bottom surface", entity=entity)
    if not np.array_equal(bottom.triangles, patch.triangles):
        raise ValueError("Bottom surface must share the patch connectivity")

    n = len(patch.vertices)
    boundary = _directed_boundary_edges(patch.triangles)
    if not len(boundary):
        raise OpenBoundaryError("open non-planar boundary", entity=entity)
    outgoing = np.bincount(boundary[:, 0], minlength=n)
    incoming = np.bincount(boundary[:, 1], minlength=n)
    if not np.array_equal(outgoing, incoming):
        raise OpenBoundaryError("open non-planar boundary", entity=entity)

    a, b = boundary[:, 0], boundary[:, 1]
    sides = np.concatenate([
        np.stack([b, a, a + n], axis=1),
        np.stack([b, a + n, b + n], axis=1),
    ])
    triangles = np.concatenate([patch.triangles, bottom.triangles[:, ::-1] + n, sides])
    space = mesh_from_indexed(np.vstack([patch.vertices, bottom.vertices]), triangles)
    if not space.is_watertight:
        raise OpenBoundaryError("non-planar space is not watertight", entity=entity)

    logger.info(
        "[%s] Non-planar space: %d triangles, volume %.4f mm3",
        entity,
        space.triangle_count,
        space.signed_volume,
    )
    return space


def interior_layer_surfaces(
    patch: SurfacePatch,
    config: SlicerConfig,
    *,
    diagnostics: Diagnostics | None = None,
) -> list[OffsetSurface]:
    """Bead centreline surfaces at -(k + 0.5) * layer_height, returned bottom-up."""
    surfaces: list[OffsetSurface] = []
    for k in range(config.nonplanar_layer_count):
        d = -(k + 0.5) * config.layer_height
        try:
            surfaces.append(offset_patch(patch, d))
        except (OffsetLimitError, DegenerateNormalError) as e:
            warn(
                diagnostics,
                "[patch %d] non-planar stack stopped at %d of %d layers: %s",
                patch.patch_id,
                len(surfaces),
                config.nonplanar_layer_count,
                e.reason,
            )
            break

    if not surfaces:
        warn(diagnostics, "[patch %d] no usable offset surface, printing it planar", patch.patch_id)
    return surfaces[::-1]


def build_patch_stack(
    patch: SurfacePatch,
    config: SlicerConfig,
    *,
    diagnostics: Diagnostics | None = None,
) -> PatchStack | None:
    """Interior surfaces plus the slab they fill; None when the patch falls back to planar printing."""
    surfaces = interior_layer_surfaces(patch, config, diagnostics=diagnostics)
    if not surfaces:
        return None

    while surfaces:
        depth = -len(surfaces) * config.layer_height
        try:
            bottom = offset_patch(patch, depth)
            space = build_nonplanar_space(patch, bottom)
            return PatchStack(patch=patch, surfaces=tuple(surfaces), space=space)
        except (OffsetLimitError, OpenBoundaryError, DegenerateNormalError) as e:
            warn(
                diagnostics,
                "[patch %d] slab bottom at %g mm failed (%s), dropping the deepest layer",
                patch.patch_id,
                depth,
                e.reason,
            )
            surfaces = surfaces[1:]

    warn(diagnostics, "[patch %d] no non-planar space could be built, printing it planar", patch.patch_id)
    return None


def dump_surface(surface: OffsetSurface, path: str | Path) -> Path:
    """Write an offset surface as STL for inspection."""
    mesh = mesh_from_indexed(surface.vertices, surface.triangles)
    return write_stl(mesh, path, name=f"patch{surface.source_patch_id}_offset")
