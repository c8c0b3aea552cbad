from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING
import logging
import math

import numpy as np
import shapely
from shapely import STRtree, affinity
from shapely.geometry import LineString, Polygon, box
from shapely.geometry.base import BaseGeometry

from app.constants import LOGGER_NAME, MITRE_LIMIT, SHARED_VERTEX_TOLERANCE, SLIVER_AREA
from app.slicer.errors import InvalidRegionError
from app.slicer.planar_slice import chains_to_geometry, clean_geometry, geometry_to_chains
from app.slicer.types import InfillPath, Layer, MonotonePolygon, PathKind, PathRole, PolygonChain, Toolpath

if TYPE_CHECKING:
    from app.models import SlicerConfig


logger = logging.getLogger(LOGGER_NAME)

_COLLINEAR = 1e-12
_TRIG_SNAP = 2.5e-16
_PASS_SNAP = 1e-9


@dataclass(frozen=True)
class WallSet:
    """Walls of one region, outer to inner, and the unprinted boundary handed to the infill."""

    walls: tuple[tuple[PolygonChain, ...], ...] = ()
    infill_boundary: tuple[PolygonChain, ...] = ()

    @property
    def wall_chains(self) -> list[PolygonChain]:
        return [chain for wall in self.walls for chain in wall]


def _validate_region(region: list[PolygonChain]) -> None:
    for index, chain in enumerate(region):
        if not chain.closed:
            raise InvalidRegionError("region contains an open chain", entity=index)
        if chain.is_hole and (chain.parent is None or not 0 <= chain.parent < len(region) or region[chain.parent].is_hole):
            raise InvalidRegionError("hole without an enclosing solid", entity=index)


def region_geometry(region: list[PolygonChain]) -> BaseGeometry:
    _validate_region(region)
    return chains_to_geometry(region)


def ss_offset(region: list[PolygonChain], d: float) -> list[PolygonChain]:
    """
    Inward mitred offset of a region by ``d``.

    Shells move inward and holes grow, so the result may split or vanish; the
    chains returned are disjoint and simple.

    Raises:
        InvalidRegionError: If holes are not nested inside a solid
    """
    if d <= 0:
        raise ValueError(f"Offset distance must be positive, got {d}")
    if not region:
        return []
    geometry = region_geometry(region)
    shrunk = geometry.buffer(-d, join_style="mitre", mitre_limit=MITRE_LIMIT)
    return geometry_to_chains(shrunk, plane_z=region[0].plane_z, min_area=SLIVER_AREA)


def generate_walls(layer_chains: list[PolygonChain], config: SlicerConfig) -> WallSet:
    """Walls at (0.5 + k) * extrusion_width and the infill boundary one width further in."""
    if not layer_chains:
        return WallSet()

    width = config.extrusion_width
    walls: list[tuple[PolygonChain, ...]] = []
    for k in range(config.wall_count):
        wall = ss_offset(layer_chains, (0.5 + k) * width)
        if not wall:
            # offsets only shrink, so every deeper wall vanishes too
            return WallSet(walls=tuple(walls))
        walls.append(tuple(wall))

    boundary = ss_offset(layer_chains, (0.5 + config.wall_count) * width)
    return WallSet(walls=tuple(walls), infill_boundary=tuple(boundary))


def is_convex(chain: PolygonChain) -> bool:
    """True when no vertex turns against the others; collinear vertices are ignored."""
    vertices = chain.vertices
    if len(vertices) < 3:
        return False
    edges = np.roll(vertices, -1, axis=0) - vertices
    following = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * following[:, 1] - edges[:, 1] * following[:, 0]
    scale = max(float(np.abs(edges).max()) ** 2, 1e-300)
    significant = cross[np.abs(cross) > _COLLINEAR * scale]
    return bool((significant > 0).all() or (significant < 0).all())


def _rotate_points(points: np.ndarray, angle_deg: float) -> np.ndarray:
    if angle_deg % 360 == 0:
        return np.array(points, dtype=np.float64)
    angle = np.radians(angle_deg)
    c, s = np.cos(angle), np.sin(angle)
    # quarter turns must map grid-aligned rings exactly
    c = 0.0 if abs(c) < _TRIG_SNAP else c
    s = 0.0 if abs(s) < _TRIG_SNAP else s
    return np.asarray(points, dtype=np.float64) @ np.array([[c, s], [-s, c]])


def _ring_event_heights(coords: np.ndarray) -> list[float]:
    """
    Heights of the split and merge events of one ring.

    Runs of vertices at one height are treated as a single vertex; an event is a
    reflex run whose neighbours lie on the same side of it.
    """
    keep = np.any(coords != np.roll(coords, 1, axis=0), axis=1)
    coords = coords[keep]
    count = len(coords)
    if count < 3:
        return []
    ys = coords[:, 1]
    starts = np.flatnonzero(ys != np.roll(ys, 1))
    if not len(starts):
        return []

    heights: list[float] = []
    for k, first in enumerate(starts):
        last = (starts[(k + 1) % len(starts)] - 1) % count
        y = ys[first]
        before = coords[first - 1]
        after = coords[(last + 1) % count]
        above_before = before[1] > y
        if above_before != (after[1] > y):
            continue
        if first == last:
            incoming = coords[first] - before
            outgoing = after - coords[first]
            cross = incoming[0] * outgoing[1] - incoming[1] * outgoing[0]
            scale = max(float(np.dot(incoming, incoming)), float(np.dot(outgoing, outgoing)), 1e-300)
            # material is on the left of every ring, so a right turn is reflex
            reflex = cross < -_COLLINEAR * scale
        else:
            travel = coords[last, 0] - coords[first, 0]
            reflex = travel < 0 if above_before else travel > 0
        if reflex:
            heights.append(float(y))
    return heights


def _event_heights(geometry: BaseGeometry) -> list[float]:
    heights: list[float] = []
    for polygon in clean_geometry(geometry).geoms:
        for ring in (polygon.exterior, *polygon.interiors):
            heights.extend(_ring_event_heights(np.asarray(ring.coords)[:-1]))
    return _merge_heights(heights)


def _vertex_heights(polygon: Polygon) -> list[float]:
    rings = (polygon.exterior, *polygon.interiors)
    return _merge_heights([float(y) for ring in rings for y in np.asarray(ring.coords)[:-1, 1]])


def _merge_heights(heights: list[float]) -> list[float]:
    # vertices a rounding error apart get a cut each; the sliver between them is dropped
    return sorted(set(heights))


def _is_monotone(polygon: Polygon) -> bool:
    """True when the exterior rises and falls once and there are no holes."""
    if polygon.interiors:
        return False
    ys = np.asarray(polygon.exterior.coords)[:-1, 1]
    steps = np.roll(ys, -1) - ys
    scale = max(float(np.ptp(ys)), 1.0)
    signs = np.sign(steps[np.abs(steps) > _COLLINEAR * scale])
    return int(np.count_nonzero(signs != np.roll(signs, 1))) <= 2


def _bands(geometry: BaseGeometry, cuts: list[float]) -> list[Polygon]:
    """Polygonal parts of ``geometry`` between consecutive horizontal cuts."""
    min_x, min_y, max_x, max_y = geometry.bounds
    levels = [min_y, *(y for y in cuts if min_y < y < max_y), max_y]
    margin = 1.0 + (max_x - min_x)
    pieces: list[Polygon] = []
    for low, high in zip(levels, levels[1:]):
        if high - low <= 0:
            continue
        band = geometry.intersection(box(min_x - margin, low, max_x + margin, high))
        pieces.extend(clean_geometry(band, SLIVER_AREA).geoms)
    return pieces


def _segments(geometry: BaseGeometry) -> list[LineString]:
    if geometry.is_empty:
        return []
    if isinstance(geometry, LineString):
        return [geometry] if geometry.length > 0 else []
    if hasattr(geometry, "geoms"):
        return [segment for part in geometry.geoms for segment in _segments(part)]
    return []


def _shared_segments(pieces: list[Polygon]) -> list[list[LineString]]:
    """Boundary stretches every piece shares with its neighbours."""
    shared: list[list[LineString]] = [[] for _ in pieces]
    tree = STRtree(pieces)
    for i, piece in enumerate(pieces):
        for j in tree.query(piece, predicate="intersects"):
            if j <= i:
                continue
            for segment in _segments(piece.boundary.intersection(pieces[j].boundary)):
                shared[i].append(segment)
                shared[j].append(segment)
    return shared


def decompose_monotone(region: list[PolygonChain], sweep_angle: float) -> list[MonotonePolygon]:
    """
    Split a region into polygons monotone along the sweep direction.

    The region is rotated by -sweep_angle and cut by horizontal lines through every
    split and merge event. A piece that still has a hole or turns back on itself is
    cut again through each of its vertices. Pieces are rotated back bottom-up and
    carry the boundary they share with their neighbours.
    """
    if not region:
        return []
    geometry = region_geometry(region)
    if geometry.area < SLIVER_AREA:
        return []

    parts = list(geometry.geoms)
    if len(parts) == 1 and not parts[0].interiors:
        shell = PolygonChain(np.asarray(parts[0].exterior.coords)[:-1])
        if is_convex(shell):
            return [MonotonePolygon(shell.vertices, float(sweep_angle))]

    rotated = affinity.rotate(geometry, -sweep_angle, origin=(0.0, 0.0)) if sweep_angle % 360 else geometry
    cuts = _event_heights(rotated)

    pieces: list[Polygon] = []
    recut = 0
    for piece in _bands(rotated, cuts):
        if _is_monotone(piece):
            pieces.append(piece)
            continue
        recut += 1
        for part in _bands(piece, _vertex_heights(piece)):
            if not _is_monotone(part):
                logger.warning("Infill piece at y=%.6f..%.6f is not monotone", part.bounds[1], part.bounds[3])
            pieces.append(part)
    pieces.sort(key=lambda piece: (piece.bounds[1], piece.bounds[0]))

    result: list[MonotonePolygon] = []
    for piece, segments in zip(pieces, _shared_segments(pieces)):
        shared = []
        for segment in segments:
            ends = _rotate_points(np.asarray(segment.coords)[[0, -1]], sweep_angle)
            shared.append((tuple(map(float, ends[0])), tuple(map(float, ends[1]))))
        vertices = _rotate_points(np.asarray(piece.exterior.coords)[:-1], sweep_angle)
        result.append(MonotonePolygon(vertices, float(sweep_angle), tuple(shared)))

    logger.debug(
        "Decomposed region into %d monotone pieces at %.1f deg (%d cuts, %d pieces recut)",
        len(result),
        sweep_angle,
        len(cuts),
        recut,
    )
    return result


def _shared_vertex_count(first: MonotonePolygon, second: MonotonePolygon) -> int:
    points = np.vstack([first.vertices, second.vertices])
    on_both = shapely.dwithin(shapely.points(points), first.polygon.boundary, SHARED_VERTEX_TOLERANCE) & shapely.dwithin(
        shapely.points(points), second.polygon.boundary, SHARED_VERTEX_TOLERANCE
    )
    shared = points[on_both]
    if not len(shared):
        return 0
    keys = np.round(shared / SHARED_VERTEX_TOLERANCE).astype(np.int64)
    return int(len(np.unique(keys, axis=0)))


def order_subpolygons(subpolys: list[MonotonePolygon]) -> list[MonotonePolygon]:
    """Depth-first order over the adjacency graph (>= 2 shared vertices), lowest index first."""
    count = len(subpolys)
    neighbors: list[list[int]] = [[] for _ in range(count)]
    for i in range(count):
        for j in range(i + 1, count):
            if not subpolys[i].polygon.buffer(SHARED_VERTEX_TOLERANCE).intersects(subpolys[j].polygon):
                continue
            if _shared_vertex_count(subpolys[i], subpolys[j]) >= 2:
                neighbors[i].append(j)
                neighbors[j].append(i)

    visited = [False] * count
    order: list[int] = []
    for start in range(count):
        if visited[start]:
            continue
        visited[start] = True
        order.append(start)
        stack = [iter(sorted(neighbors[start]))]
        while stack:
            following = next((n for n in stack[-1] if not visited[n]), None)
            if following is None:
                stack.pop()
                continue
            visited[following] = True
            order.append(following)
            stack.append(iter(sorted(neighbors[following])))
    return [subpolys[i] for i in order]


def _ring_crossings(ring: np.ndarray, y: float, *, closing: bool = False) -> list[tuple[float, int]]:
    """
    (x, edge index) where the horizontal line at y crosses the closed ring.

    Edges are half-open at the top, or at the bottom when ``closing`` so a line
    through the topmost edge still meets the edges rising to it.
    """
    crossings = []
    count = len(ring)
    for i in range(count):
        a, b = ring[i], ring[(i + 1) % count]
        if closing:
            hit = (a[1] < y <= b[1]) or (b[1] < y <= a[1])
        else:
            hit = (a[1] <= y < b[1]) or (b[1] <= y < a[1])
        if hit:
            x = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            crossings.append((float(x), i))
    crossings.sort()
    return crossings


def _open_edge_length(ring: np.ndarray, partition: np.ndarray, y: float) -> float:
    """Length of the ring's horizontal edges at y not shared with a neighbouring piece."""
    following = np.roll(ring, -1, axis=0)
    level = (np.abs(ring[:, 1] - y) <= _PASS_SNAP) & (np.abs(following[:, 1] - y) <= _PASS_SNAP)
    length = float(np.abs(following[level, 0] - ring[level, 0]).sum())
    if len(partition):
        on_level = (np.abs(partition[:, 0, 1] - y) <= _PASS_SNAP) & (np.abs(partition[:, 1, 1] - y) <= _PASS_SNAP)
        length -= float(np.abs(partition[on_level, 1, 0] - partition[on_level, 0, 0]).sum())
    return length


def _pass_heights(
    ring: np.ndarray,
    partition: np.ndarray,
    d: float,
    phase: float | None,
) -> list[tuple[float, bool]]:
    y_min = float(ring[:, 1].min())
    y_max = float(ring[:, 1].max())
    if phase is None:
        heights = []
        n = 1
        while y_min + n * d < y_max:
            heights.append((y_min + n * d, False))
            n += 1
        return heights

    heights = []
    n = math.ceil((y_min - _PASS_SNAP - phase) / d)
    while phase + n * d < y_max - _PASS_SNAP:
        heights.append((max(phase + n * d, y_min), False))
        n += 1
    if _open_edge_length(ring, partition, y_min) > _PASS_SNAP and (not heights or heights[0][0] > y_min + _PASS_SNAP):
        heights.insert(0, (y_min, False))
    if _open_edge_length(ring, partition, y_max) > _PASS_SNAP and (not heights or heights[-1][0] < y_max - _PASS_SNAP):
        heights.append((y_max, True))
    return heights


def _boundary_connector(
    ring: np.ndarray,
    cumulative: np.ndarray,
    start: tuple[np.ndarray, int],
    end: tuple[np.ndarray, int],
    y_range: tuple[float, float],
) -> np.ndarray:
    """Ring vertices strictly between two boundary points, along the arc that stays in ``y_range``."""
    total = float(cumulative[-1])
    stations = cumulative[:-1]

    def position(point: np.ndarray, edge: int) -> float:
        return float(cumulative[edge] + np.linalg.norm(point - ring[edge]))

    def arc(begin: float, length: float) -> list[np.ndarray]:
        offsets = (stations - begin) % total
        inside = np.flatnonzero((offsets > 1e-12) & (offsets < length - 1e-12))
        return [ring[i] for i in inside[np.argsort(offsets[inside])]]

    s = position(*start)
    e = position(*end)
    forward_length = (e - s) % total
    forward = arc(s, forward_length)
    backward = arc(e, total - forward_length)[::-1]

    low, high = y_range
    fits_forward = all(low - 1e-9 <= v[1] <= high + 1e-9 for v in forward)
    fits_backward = all(low - 1e-9 <= v[1] <= high + 1e-9 for v in backward)
    if fits_forward != fits_backward:
        chosen = forward if fits_forward else backward
    else:
        chosen = forward if forward_length <= total - forward_length else backward
    return np.array(chosen).reshape(-1, 2)


def zigzag(poly: MonotonePolygon, d: float, angle: float, *, phase: float | None = None) -> InfillPath:
    """
    Serpentine fill of a monotone polygon with passes ``d`` apart.

    Passes run at y_min + n * d (n >= 1) in the frame rotated by -angle, alternate
    direction and are joined along the polygon boundary.

    With ``phase`` the passes sit on the lines phase + n * d shared by every piece of
    a decomposed region instead, and a bottom or top edge that is not shared with a
    neighbouring piece gets a pass of its own so the beads reach the boundary.
    """
    if d <= 0:
        raise ValueError(f"Infill spacing must be positive, got {d}")

    ring = _rotate_points(poly.vertices, -angle)
    if len(ring) < 3:
        return InfillPath(np.zeros((0, 2)), d, angle)
    partition = (
        _rotate_points(np.array(poly.partition_edges, dtype=np.float64).reshape(-1, 2), -angle).reshape(-1, 2, 2)
        if poly.partition_edges
        else np.zeros((0, 2, 2))
    )

    passes: list[tuple[tuple[np.ndarray, int], tuple[np.ndarray, int], float]] = []
    for y, closing in _pass_heights(ring, partition, d, phase):
        crossings = _ring_crossings(ring, y, closing=closing)
        if len(crossings) < 2:
            continue
        if len(crossings) > 2:
            logger.debug("Pass at y=%.6f crosses the polygon %d times, using the outer pair", y, len(crossings))
        (x0, e0), (x1, e1) = crossings[0], crossings[-1]
        if x1 - x0 <= _PASS_SNAP:
            continue
        left = (np.array([x0, y]), e0)
        right = (np.array([x1, y]), e1)
        passes.append((left, right, y) if len(passes) % 2 == 0 else (right, left, y))

    if not passes:
        return InfillPath(np.zeros((0, 2)), d, angle)

    edges = np.linalg.norm(np.roll(ring, -1, axis=0) - ring, axis=1)
    cumulative = np.concatenate([[0.0], np.cumsum(edges)])

    points: list[np.ndarray] = []
    previous: tuple[np.ndarray, int] | None = None
    previous_y = 0.0
    for start, end, y in passes:
        if previous is not None:
            connector = _boundary_connector(ring, cumulative, previous, start, (previous_y, y))
            points.extend(connector)
        points.append(start[0])
        points.append(end[0])
        previous = end
        previous_y = y

    path = _rotate_points(np.array(points), angle)
    return InfillPath(path, spacing=d, angle_deg=angle, pass_count=len(passes))


def infill_angle(layer_index: int, base_angle: float) -> float:
    return base_angle + 90.0 * (layer_index % 2)


def planar_infill(infill_boundary: list[PolygonChain], config: SlicerConfig, layer_index: int) -> list[InfillPath]:
    """
    Zigzag paths over the monotone pieces of the infill boundary, in adjacency order.

    The infill boundary is the centreline of a wall that is not printed, so the passes
    start on it and share one set of lines across all pieces; the beads then abut the
    innermost wall.
    """
    if not infill_boundary:
        return []
    angle = infill_angle(layer_index, config.infill_base_angle_deg)
    pieces = order_subpolygons(decompose_monotone(infill_boundary, angle))
    if not pieces:
        return []
    phase = float(_rotate_points(np.vstack([chain.vertices for chain in infill_boundary]), -angle)[:, 1].min())
    paths = [zigzag(piece, config.infill_spacing, angle, phase=phase) for piece in pieces]
    return [path for path in paths if not path.is_empty]


def _planar_toolpath(points: np.ndarray, role: PathRole, layer: Layer, z: float) -> Toolpath:
    count = len(points)
    extruding = np.ones(count, dtype=bool)
    extruding[0] = False
    return Toolpath(
        role=role,
        kind=PathKind.PLANAR,
        layer=layer.index,
        positions=np.column_stack([points, np.full(count, z)]),
        orientations=np.tile([0.0, 0.0, 1.0], (count, 1)),
        extruding=extruding,
    )


def fill_layer(layer: Layer, config: SlicerConfig) -> Layer:
    """Layer with its walls and infill generated from its cross-section."""
    wall_set = generate_walls(list(layer.chains), config)
    infill = planar_infill(list(wall_set.infill_boundary), config, layer.index)
    return replace(layer, walls=wall_set.walls, infill=tuple(infill))


def layer_toolpaths(layer: Layer, config: SlicerConfig) -> list[Toolpath]:
    """Outer wall, inner walls, then infill of a filled layer at its bead centreline height."""
    z = layer.z - config.layer_height / 2.0
    toolpaths: list[Toolpath] = []
    for k, wall in enumerate(layer.walls):
        role = PathRole.OUTER_WALL if k == 0 else PathRole.INNER_WALL
        toolpaths.extend(_planar_toolpath(chain.as_polyline(), role, layer, z) for chain in wall)
    toolpaths.extend(_planar_toolpath(path.points, PathRole.INFILL, layer, z) for path in layer.infill if not path.is_empty)
    return toolpaths
