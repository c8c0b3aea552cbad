from __future__ import annotations

from concurrent.futures import Executor
from typing import TYPE_CHECKING
import logging
import math

import numpy as np
import shapely
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from shapely.geometry import MultiPolygon, Polygon
from shapely.geometry.base import BaseGeometry
from shapely.geometry.polygon import orient

from app.constants import ENDPOINT_TOLERANCE, LOGGER_NAME, MIN_REGION_AREA, PLANE_SNAP
from app.slicer.diagnostics import Diagnostics, warn
from app.slicer.errors import CrossSectionError
from app.slicer.types import Layer, Orientation, PolygonChain, TriangleMesh

if TYPE_CHECKING:
    from app.models import SlicerConfig


logger = logging.getLogger(LOGGER_NAME)

_ZERO_SEGMENT = 1e-12


def slice_plane(mesh: TriangleMesh, z: float) -> np.ndarray:
    """
    Intersect the mesh with the horizontal plane at ``z``.

    Returns:
        (k, 2, 2) array of xy segments, oriented with material on the left where the
        facet normal allows it; duplicates and zero-length segments removed
    """
    coords = mesh.triangle_coordinates
    if not len(coords):
        return np.zeros((0, 2, 2))

    dz = coords[:, :, 2] - z
    # vertices on the plane count as above it
    above = dz > -PLANE_SNAP
    count_above = above.sum(axis=1)
    pieces: list[np.ndarray] = []

    crossing = np.flatnonzero((count_above == 1) | (count_above == 2))
    if len(crossing):
        tri = coords[crossing]
        flags = above[crossing]
        odd = np.where(count_above[crossing] == 1, np.argmax(flags, axis=1), np.argmin(flags, axis=1))
        rows = np.arange(len(crossing))
        p0 = tri[rows, odd]
        p1 = tri[rows, (odd + 1) % 3]
        p2 = tri[rows, (odd + 2) % 3]
        start = _edge_plane_point(p0, p1, z)
        end = _edge_plane_point(p0, p2, z)
        segments = np.stack([start, end], axis=1)

        normals = mesh.facet_normals[crossing]
        tangent = np.stack([-normals[:, 1], normals[:, 0]], axis=1)
        backwards = np.einsum("ij,ij->i", segments[:, 1] - segments[:, 0], tangent) < 0
        segments[backwards] = segments[backwards][:, ::-1]
        pieces.append(segments)

    coplanar = np.flatnonzero((np.abs(dz) <= PLANE_SNAP).all(axis=1))
    if len(coplanar):
        triangles = mesh.triangles[coplanar]
        edges = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        keys = np.sort(edges, axis=1)
        _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        outline = edges[counts[inverse.reshape(-1)] == 1]
        if len(outline):
            pieces.append(mesh.vertices[outline][:, :, :2])

    if not pieces:
        return np.zeros((0, 2, 2))
    return _clean_segments(np.concatenate(pieces))


def _edge_plane_point(a: np.ndarray, b: np.ndarray, z: float) -> np.ndarray:
    span = b[:, 2] - a[:, 2]
    t = np.divide(z - a[:, 2], span, out=np.zeros_like(span), where=span != 0)
    t = np.clip(t, 0.0, 1.0)
    return (a + t[:, None] * (b - a))[:, :2]


def _clean_segments(segments: np.ndarray) -> np.ndarray:
    lengths = np.linalg.norm(segments[:, 1] - segments[:, 0], axis=1)
    segments = segments[lengths > _ZERO_SEGMENT]
    if not len(segments):
        return segments
    rounded = np.round(segments, 9)
    first = rounded[:, 0]
    second = rounded[:, 1]
    flip = (second[:, 0] < first[:, 0]) | ((second[:, 0] == first[:, 0]) & (second[:, 1] < first[:, 1]))
    keys = np.where(flip[:, None], np.hstack([second, first]), np.hstack([first, second]))
    _, keep = np.unique(keys, axis=0, return_index=True)
    return segments[np.sort(keep)]


def sort_segments(segments: np.ndarray, tol: float = ENDPOINT_TOLERANCE) -> list[PolygonChain]:
    """
    Chain unordered segments by matching endpoints within ``tol``.

    Closed chains are returned CCW, every chain starts at its lexicographically smallest
    vertex, and the chain list is sorted, so the output does not depend on input order.
    Open chains are kept and reported.
    """
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 2, 2)
    if len(segments):
        segments = segments[np.linalg.norm(segments[:, 1] - segments[:, 0], axis=1) > _ZERO_SEGMENT]
    if not len(segments):
        return []

    endpoints = segments.reshape(-1, 2)
    pairs = cKDTree(endpoints).query_pairs(tol, output_type="ndarray")
    graph = coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])) if len(pairs) else (np.zeros(0), (np.zeros(0, int), np.zeros(0, int))),
        shape=(len(endpoints), len(endpoints)),
    )
    _, labels = connected_components(graph, directed=False)

    # nodes are numbered by the lexicographic rank of their smallest endpoint
    lexicographic = np.lexsort((endpoints[:, 1], endpoints[:, 0]))
    node_of_label: dict[int, int] = {}
    node_coords: list[np.ndarray] = []
    for index in lexicographic:
        label = int(labels[index])
        if label not in node_of_label:
            node_of_label[label] = len(node_coords)
            node_coords.append(endpoints[index])
    nodes = np.array([node_of_label[int(label)] for label in labels]).reshape(-1, 2)

    edges: set[tuple[int, int]] = set()
    for u, v in nodes.tolist():
        if u != v:
            edges.add((u, v) if u < v else (v, u))

    neighbors: dict[int, list[int]] = {}
    for u, v in edges:
        neighbors.setdefault(u, []).append(v)
        neighbors.setdefault(v, []).append(u)
    for adjacent in neighbors.values():
        adjacent.sort()

    used: set[tuple[int, int]] = set()

    def next_node(node: int) -> int | None:
        for candidate in neighbors.get(node, ()):
            key = (node, candidate) if node < candidate else (candidate, node)
            if key not in used:
                used.add(key)
                return candidate
        return None

    def walk(start: int) -> list[int]:
        path = [start]
        current = start
        while True:
            following = next_node(current)
            if following is None:
                return path
            path.append(following)
            if following == start:
                return path
            current = following

    paths: list[list[int]] = []
    odd_nodes = sorted(node for node, adjacent in neighbors.items() if len(adjacent) % 2 == 1)
    for start in odd_nodes + sorted(neighbors):
        while any(((start, n) if start < n else (n, start)) not in used for n in neighbors[start]):
            paths.append(walk(start))

    chains: list[PolygonChain] = []
    for path in paths:
        closed = len(path) > 3 and path[0] == path[-1]
        vertices = np.array([node_coords[node] for node in (path[:-1] if closed else path)])
        chain = PolygonChain(vertices, closed=closed)
        if closed:
            chain = chain.oriented(Orientation.CCW)
        elif len(vertices) >= 2:
            logger.warning("Discontinuity in cross-section: open chain with %d vertices starting at (%.6f, %.6f)", len(vertices), *vertices[0])
        chains.append(chain.canonical())

    chains.sort(key=lambda chain: (not chain.closed, tuple(chain.vertices[0]), len(chain)))
    return chains


def _as_valid_polygon(chain: PolygonChain) -> BaseGeometry:
    polygon = Polygon(chain.vertices)
    return polygon if polygon.is_valid else shapely.make_valid(polygon)


def identify_holes(chains: list[PolygonChain]) -> list[PolygonChain]:
    """
    Nest closed chains by containment: odd depth means hole.

    Solids come back CCW, holes CW; ``parent`` is the index (in the returned list) of the
    smallest containing chain.

    Raises:
        CrossSectionError: If two chains partially overlap
    """
    closed = [chain for chain in chains if chain.closed and len(chain) >= 3]
    if not closed:
        return []

    polygons = np.array([_as_valid_polygon(chain) for chain in closed], dtype=object)
    areas = np.array([abs(chain.signed_area) for chain in closed])

    overlapping = shapely.overlaps(polygons[:, None], polygons[None, :])
    if overlapping.any():
        i, j = (int(v) for v in np.argwhere(overlapping)[0])
        raise CrossSectionError("intersecting cross-section chains", entity=(i, j))

    # contains[j, i]: chain j encloses chain i
    contains = shapely.covers(polygons[:, None], polygons[None, :]) & (areas[:, None] > areas[None, :])
    np.fill_diagonal(contains, False)
    depth = contains.sum(axis=0)

    nested: list[PolygonChain] = []
    for i, chain in enumerate(closed):
        enclosing = np.flatnonzero(contains[:, i])
        parent = int(enclosing[np.argmin(areas[enclosing])]) if len(enclosing) else None
        is_hole = bool(depth[i] % 2 == 1)
        oriented = chain.oriented(Orientation.CW if is_hole else Orientation.CCW)
        nested.append(PolygonChain(oriented.vertices, True, is_hole, parent, chain.plane_z))
    return nested


def _polygon_parts(geometry: BaseGeometry, min_area: float) -> list[Polygon]:
    if geometry.is_empty:
        return []
    if isinstance(geometry, Polygon):
        parts = [geometry]
    elif hasattr(geometry, "geoms"):
        parts = [part for sub in geometry.geoms for part in _polygon_parts(sub, 0.0)]
    else:
        parts = []
    return [part for part in parts if part.area > min_area]


def clean_geometry(geometry: BaseGeometry, min_area: float = 0.0) -> MultiPolygon:
    """Keep only the polygonal parts larger than ``min_area``, made valid and CCW."""
    if not geometry.is_valid:
        geometry = shapely.make_valid(geometry)
    return MultiPolygon([orient(part, sign=1.0) for part in _polygon_parts(geometry, min_area)])


def chains_to_geometry(chains: list[PolygonChain]) -> MultiPolygon:
    """Build shapely polygons from nested chains (solids with their direct holes)."""
    polygons = []
    for index, chain in enumerate(chains):
        if chain.is_hole or not chain.closed or len(chain) < 3:
            continue
        holes = [hole.vertices for hole in chains if hole.is_hole and hole.parent == index and len(hole) >= 3]
        polygons.append(Polygon(chain.vertices, holes))
    geometry = MultiPolygon(polygons)
    if not geometry.is_valid:
        geometry = shapely.union_all([shapely.make_valid(polygon) for polygon in polygons])
    return clean_geometry(geometry)


def geometry_to_chains(geometry: BaseGeometry, plane_z: float | None = None, min_area: float = 0.0) -> list[PolygonChain]:
    """Chains of the polygonal parts of ``geometry``: CCW shells followed by their CW holes."""
    parts = _polygon_parts(clean_geometry(geometry), min_area)
    parts.sort(key=lambda part: tuple(np.asarray(part.exterior.coords)[:-1].min(axis=0)))

    chains: list[PolygonChain] = []
    for part in parts:
        shell = PolygonChain(np.asarray(part.exterior.coords)[:-1], plane_z=plane_z).oriented(Orientation.CCW).canonical()
        parent = len(chains)
        chains.append(shell)
        holes = [
            PolygonChain(np.asarray(ring.coords)[:-1], is_hole=True, parent=parent, plane_z=plane_z)
            .oriented(Orientation.CW)
            .canonical()
            for ring in part.interiors
        ]
        holes.sort(key=lambda hole: tuple(hole.vertices[0]))
        chains.extend(holes)
    return chains


def section_geometry(mesh: TriangleMesh, z: float, *, diagnostics: Diagnostics | None = None) -> MultiPolygon:
    chains = sort_segments(slice_plane(mesh, z))
    open_chains = [chain for chain in chains if not chain.closed]
    if open_chains:
        warn(diagnostics, "[z %.4f] %d open cross-section chains ignored", z, len(open_chains))
    return chains_to_geometry(identify_holes(chains))


def planar_only_section(
    mesh: TriangleMesh,
    spaces: list[TriangleMesh],
    z: float,
    *,
    space_z: float | None = None,
    diagnostics: Diagnostics | None = None,
) -> list[PolygonChain]:
    """
    Section of the mesh at ``z`` minus the sections of every non-planar space at ``space_z``.

    ``space_z`` defaults to ``z``; layers pass the mid-height of their bead so a layer
    whose top touches a slab bottom keeps its section.
    """
    cut_z = z if space_z is None else space_z
    region: BaseGeometry = section_geometry(mesh, z, diagnostics=diagnostics)
    for space in spaces:
        low, high = space.bounds
        if region.is_empty or cut_z < low[2] - PLANE_SNAP or cut_z > high[2] + PLANE_SNAP:
            continue
        region = region.difference(section_geometry(space, cut_z, diagnostics=diagnostics))
    return geometry_to_chains(region, plane_z=z, min_area=MIN_REGION_AREA)


def generate_layers(
    mesh: TriangleMesh,
    spaces: list[TriangleMesh],
    config: SlicerConfig,
    *,
    diagnostics: Diagnostics | None = None,
    executor: Executor | None = None,
) -> list[Layer]:
    """
    Section the planar-only body at z = (i + 1) * layer_height.

    The non-planar spaces are cut at the bead mid-height z - layer_height / 2.
    Layers are computed independently (optionally on ``executor``) and returned,
    with their warnings, in index order.
    """
    height = config.layer_height
    z_max = float(mesh.bounds[1][2])
    count = int(math.floor(z_max / height + 1e-9))
    if count <= 0:
        warn(diagnostics, "mesh is shorter than one layer (%.4f mm < %.4f mm), no planar layers", z_max, height)
        return []

    unsliced = z_max - count * height
    if unsliced > 1e-9:
        warn(diagnostics, "top %.4f mm of the mesh is above the last layer and left unsliced", unsliced)

    def section(index: int) -> tuple[Layer, Diagnostics]:
        local = Diagnostics()
        z = (index + 1) * height
        chains = planar_only_section(mesh, spaces, z, space_z=z - height / 2.0, diagnostics=local)
        return Layer(index=index, z=z, chains=tuple(chains)), local

    results = executor.map(section, range(count)) if executor is not None else map(section, range(count))
    layers: list[Layer] = []
    for layer, local in results:
        layers.append(layer)
        if diagnostics is not None:
            diagnostics.extend(local)

    logger.info("Generated %d planar layers (%d empty)", len(layers), sum(layer.is_empty for layer in layers))
    return layers
