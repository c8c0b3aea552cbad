from __future__ import annotations

from typing import TYPE_CHECKING, Iterable, Literal
import logging

import numpy as np
import shapely
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from shapely import STRtree

from app.constants import DEFAULT_METRICS_GRID, LOGGER_NAME
from app.slicer.errors import MetricsError
from app.slicer.spatial import TriangleIndex2D, plane_z_at
from app.slicer.types import PointSet, PointSetLabel, SurfacePatch, Toolpath, TriangleMesh

if TYPE_CHECKING:
    from app.models import SlicerConfig


logger = logging.getLogger(LOGGER_NAME)

Region = tuple[float, float, float, float]

SURFACE_HIT_EPS = 1e-9
BRUTE_FORCE_CHUNK = 2048
BEAD_QUERY_CHUNK = 20000


def _as_points(values: PointSet | np.ndarray) -> np.ndarray:
    points = values.points if isinstance(values, PointSet) else np.asarray(values, dtype=np.float64)
    return points.reshape(-1, 3)


def _nearest_distances(source: np.ndarray, target: np.ndarray, method: str) -> np.ndarray:
    if method == "kdtree":
        distances, _ = cKDTree(target).query(source)
        return distances
    if method == "brute":
        return np.concatenate([
            cdist(source[start:start + BRUTE_FORCE_CHUNK], target).min(axis=1)
            for start in range(0, len(source), BRUTE_FORCE_CHUNK)
        ])
    raise ValueError(f"Unknown nearest-neighbour method: {method}")


def chamfer(p: PointSet | np.ndarray, q: PointSet | np.ndarray, method: Literal["kdtree", "brute"] = "kdtree") -> float:
    """
    Symmetric Chamfer distance: mean nearest distance P -> Q plus mean Q -> P.

    Raises:
        MetricsError: If either set is empty
    """
    first = _as_points(p)
    second = _as_points(q)
    if not len(first) or not len(second):
        raise MetricsError("empty point set", entity="chamfer")
    forward = float(_nearest_distances(first, second, method).mean())
    backward = float(_nearest_distances(second, first, method).mean())
    return forward + backward


def grid_points(region: Region, resolution: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """xy sample positions over the region and their (i, j) grid indices, x index first."""
    nx, ny = (int(v) for v in resolution)
    if nx < 1 or ny < 1:
        raise ValueError(f"Grid resolution must be positive, got {resolution}")
    x0, y0, x1, y1 = region
    xs = np.linspace(x0, x1, nx) if nx > 1 else np.array([(x0 + x1) / 2.0])
    ys = np.linspace(y0, y1, ny) if ny > 1 else np.array([(y0 + y1) / 2.0])
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    index = np.column_stack([ii.reshape(-1), jj.reshape(-1)])
    return np.column_stack([xs[index[:, 0]], ys[index[:, 1]]]), index


def sample_mesh_surface(
    mesh: TriangleMesh,
    region: Region,
    resolution: tuple[int, int] = DEFAULT_METRICS_GRID,
    *,
    label: PointSetLabel = PointSetLabel.SOURCE,
) -> PointSet:
    """
    First hit of a downward ray at every grid position; positions off the mesh are skipped.

    Raises:
        MetricsError: If no ray hits the mesh
    """
    xy, index = grid_points(region, resolution)
    triangles = TriangleIndex2D(mesh.triangle_coordinates)
    point_idx, tri_idx, s, t = triangles.containing(xy, SURFACE_HIT_EPS)
    if not len(point_idx):
        raise MetricsError("no grid ray hits the mesh", entity=f"region {tuple(round(v, 4) for v in region)}")

    heights = np.full(len(xy), -np.inf)
    np.maximum.at(heights, point_idx, plane_z_at(mesh.triangle_coordinates[tri_idx], s, t))
    hit = np.isfinite(heights)
    return PointSet(np.column_stack([xy[hit], heights[hit]]), label, index[hit])


def reconstruct_deposited_surface(
    paths: Iterable[Toolpath],
    config: SlicerConfig,
    region: Region,
    resolution: tuple[int, int] = DEFAULT_METRICS_GRID,
    *,
    label: PointSetLabel = PointSetLabel.NONPLANAR,
) -> PointSet:
    """
    Top of the deposited beads sampled on the grid.

    Every extruding segment is a bead of half-width extrusion_width / 2 around its
    centreline (round ends in xy) whose flat top lies layer_height / 2 above it; the
    surface at a grid position is the highest bead top covering it.

    Raises:
        MetricsError: If no bead covers any grid position
    """
    starts: list[np.ndarray] = []
    ends: list[np.ndarray] = []
    for path in paths:
        a, b = path.extruding_segments()
        starts.append(a)
        ends.append(b)
    a = np.concatenate(starts) if starts else np.zeros((0, 3))
    b = np.concatenate(ends) if ends else np.zeros((0, 3))

    moving = np.linalg.norm(b[:, :2] - a[:, :2], axis=1) > 0
    a, b = a[moving], b[moving]
    if not len(a):
        raise MetricsError("no extruding segments to reconstruct", entity=label.value)

    xy, index = grid_points(region, resolution)
    half_width = config.extrusion_width / 2.0
    tree = STRtree(shapely.linestrings(np.stack([a[:, :2], b[:, :2]], axis=1)))
    heights = np.full(len(xy), -np.inf)

    direction = b[:, :2] - a[:, :2]
    squared = np.einsum("ij,ij->i", direction, direction)
    for start in range(0, len(xy), BEAD_QUERY_CHUNK):
        chunk = xy[start:start + BEAD_QUERY_CHUNK]
        pairs = tree.query(shapely.points(chunk), predicate="dwithin", distance=half_width)
        if not pairs.shape[1]:
            continue
        point_idx, segment_idx = pairs[0], pairs[1]
        relative = chunk[point_idx] - a[segment_idx, :2]
        t = np.clip(np.einsum("ij,ij->i", relative, direction[segment_idx]) / squared[segment_idx], 0.0, 1.0)
        top = a[segment_idx, 2] + t * (b[segment_idx, 2] - a[segment_idx, 2]) + config.layer_height / 2.0
        np.maximum.at(heights, start + point_idx, top)

    covered = np.isfinite(heights)
    if not covered.any():
        raise MetricsError("deposited beads cover no grid position", entity=label.value)
    return PointSet(np.column_stack([xy[covered], heights[covered]]), label, index[covered])


def comparison_region(patches: Iterable[SurfacePatch]) -> Region | None:
    """xy bounding box of all non-planar patches."""
    bounds = [patch.xy_bounds for patch in patches]
    if not bounds:
        return None
    values = np.array(bounds)
    return (
        float(values[:, 0].min()),
        float(values[:, 1].min()),
        float(values[:, 2].max()),
        float(values[:, 3].max()),
    )


def accuracy_point_sets(
    mesh: TriangleMesh,
    planar_paths: list[Toolpath],
    nonplanar_paths: list[Toolpath],
    config: SlicerConfig,
    region: Region,
    resolution: tuple[int, int] = DEFAULT_METRICS_GRID,
) -> dict[PointSetLabel, PointSet]:
    return {
        PointSetLabel.SOURCE: sample_mesh_surface(mesh, region, resolution),
        PointSetLabel.PLANAR: reconstruct_deposited_surface(planar_paths, config, region, resolution, label=PointSetLabel.PLANAR),
        PointSetLabel.NONPLANAR: reconstruct_deposited_surface(
            nonplanar_paths, config, region, resolution, label=PointSetLabel.NONPLANAR
        ),
    }


def accuracy_report(
    mesh: TriangleMesh,
    planar_paths: list[Toolpath],
    nonplanar_paths: list[Toolpath],
    config: SlicerConfig,
    region: Region,
    resolution: tuple[int, int] = DEFAULT_METRICS_GRID,
    *,
    point_sets: dict[PointSetLabel, PointSet] | None = None,
) -> tuple[float, float]:
    """
    Chamfer distances of the planar-only baseline and of the combined toolpaths to the mesh top.

    ``planar_paths`` is the forced-planar baseline; ``nonplanar_paths`` is the full
    combined output (planar interior plus non-planar layers).
    """
    sets = point_sets or accuracy_point_sets(mesh, planar_paths, nonplanar_paths, config, region, resolution)
    source = sets[PointSetLabel.SOURCE]
    cd_planar = chamfer(source, sets[PointSetLabel.PLANAR])
    cd_nonplanar = chamfer(source, sets[PointSetLabel.NONPLANAR])
    logger.info(
        "Accuracy over %d source samples: planar CD %.6f mm, non-planar CD %.6f mm",
        len(source),
        cd_planar,
        cd_nonplanar,
    )
    return cd_planar, cd_nonplanar


def cross_section_profiles(
    point_sets: dict[PointSetLabel, PointSet],
    resolution: tuple[int, int],
) -> dict[str, dict[str, list[list[float]]]]:
    """
    Profiles through the grid centre of every point set.

    ``plane_x`` holds (y, z) pairs of the centre column (constant x), ``plane_y`` holds
    (x, z) pairs of the centre row.
    """
    nx, ny = (int(v) for v in resolution)
    profiles: dict[str, dict[str, list[list[float]]]] = {}
    for label, point_set in point_sets.items():
        if point_set.grid_index is None:
            raise ValueError(f"Point set {label.value} has no grid index")
        column = point_set.grid_index[:, 0] == nx // 2
        row = point_set.grid_index[:, 1] == ny // 2
        along_y = point_set.points[column][:, [1, 2]]
        along_x = point_set.points[row][:, [0, 2]]
        profiles[label.value] = {
            "plane_x": along_y[np.argsort(along_y[:, 0], kind="stable")].tolist(),
            "plane_y": along_x[np.argsort(along_x[:, 0], kind="stable")].tolist(),
        }
    return profiles
