from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from shapely.geometry import Polygon


def frozen_array(values, dtype=np.float64, shape_tail: tuple[int, ...] = ()) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    if array.size == 0 and shape_tail:
        array = array.reshape((0, *shape_tail))
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh; vertices in mm, one unit facet normal per triangle."""

    vertices: np.ndarray
    triangles: np.ndarray
    facet_normals: np.ndarray
    edge_adjacency: dict[tuple[int, int], list[int]]
    dropped_triangles: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", frozen_array(self.vertices, np.float64, (3,)))
        object.__setattr__(self, "triangles", frozen_array(self.triangles, np.int64, (3,)))
        object.__setattr__(self, "facet_normals", frozen_array(self.facet_normals, np.float64, (3,)))

    @property
    def triangle_count(self) -> int:
        return int(len(self.triangles))

    @property
    def vertex_count(self) -> int:
        return int(len(self.vertices))

    @cached_property
    def triangle_coordinates(self) -> np.ndarray:
        return self.vertices[self.triangles]

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def boundary_edges(self) -> list[tuple[int, int]]:
        return sorted(edge for edge, incident in self.edge_adjacency.items() if len(incident) == 1)

    @property
    def is_watertight(self) -> bool:
        return bool(self.edge_adjacency) and all(len(incident) == 2 for incident in self.edge_adjacency.values())

    @property
    def signed_volume(self) -> float:
        coords = self.triangle_coordinates
        return float(np.einsum("ij,ij->i", coords[:, 0], np.cross(coords[:, 1], coords[:, 2])).sum() / 6.0)

    @property
    def euler_characteristic(self) -> int:
        used = np.unique(self.triangles).size
        return int(used - len(self.edge_adjacency) + self.triangle_count)


class Orientation(str, Enum):
    CCW = "ccw"
    CW = "cw"


@dataclass(frozen=True, eq=False)
class PolygonChain:
    """Ordered 2D polyline; closed chains store each vertex once (implicit closure)."""

    vertices: np.ndarray
    closed: bool = True
    is_hole: bool = False
    parent: int | None = None
    plane_z: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", frozen_array(self.vertices, np.float64, (2,)))

    def __len__(self) -> int:
        return int(len(self.vertices))

    @property
    def signed_area(self) -> float:
        if not self.closed or len(self.vertices) < 3:
            return 0.0
        x = self.vertices[:, 0]
        y = self.vertices[:, 1]
        return float(0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))

    @property
    def orientation(self) -> Orientation:
        return Orientation.CCW if self.signed_area >= 0 else Orientation.CW

    @property
    def length(self) -> float:
        points = self.as_polyline()
        if len(points) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())

    def as_polyline(self) -> np.ndarray:
        """Vertices with the first one repeated at the end for closed chains."""
        if self.closed and len(self.vertices):
            return np.vstack([self.vertices, self.vertices[:1]])
        return np.array(self.vertices)

    def reversed(self) -> PolygonChain:
        return PolygonChain(self.vertices[::-1], self.closed, self.is_hole, self.parent, self.plane_z)

    def oriented(self, orientation: Orientation) -> PolygonChain:
        return self if self.orientation == orientation else self.reversed()

    def canonical(self) -> PolygonChain:
        """Closed chains start at their lexicographically smallest vertex; open chains at the smaller end."""
        vertices = self.vertices
        if not len(vertices):
            return self
        if self.closed:
            start = int(np.lexsort((vertices[:, 1], vertices[:, 0]))[0])
            vertices = np.roll(vertices, -start, axis=0)
        elif tuple(vertices[-1]) < tuple(vertices[0]):
            vertices = vertices[::-1]
        return PolygonChain(vertices, self.closed, self.is_hole, self.parent, self.plane_z)

    def to_polygon(self) -> Polygon:
        return Polygon(self.vertices)


@dataclass(frozen=True, eq=False)
class InfillPath:
    """Serpentine 2D polyline filling one monotone polygon."""

    points: np.ndarray
    spacing: float
    angle_deg: float
    pass_count: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", frozen_array(self.points, np.float64, (2,)))

    @property
    def is_empty(self) -> bool:
        return len(self.points) < 2


@dataclass(frozen=True, eq=False)
class Layer:
    """Planar layer sectioned at its top plane z; walls are grouped outer to inner."""

    index: int
    z: float
    chains: tuple[PolygonChain, ...] = ()
    walls: tuple[tuple[PolygonChain, ...], ...] = ()
    infill: tuple[InfillPath, ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.chains


@dataclass(frozen=True, eq=False)
class MonotonePolygon:
    """Polygon crossed at most twice by every line perpendicular to its sweep direction."""

    vertices: np.ndarray
    sweep_angle_deg: float
    partition_edges: tuple[tuple[tuple[float, float], tuple[float, float]], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", frozen_array(self.vertices, np.float64, (2,)))

    @property
    def sweep_direction(self) -> np.ndarray:
        angle = np.radians(self.sweep_angle_deg)
        return np.array([-np.sin(angle), np.cos(angle)])

    @cached_property
    def polygon(self) -> Polygon:
        return Polygon(self.vertices)

    @property
    def area(self) -> float:
        return float(self.polygon.area)


@dataclass(frozen=True, eq=False)
class SurfacePatch:
    """Edge-connected set of upward facing triangles printed non-planar.

    ``vertices`` and ``triangles`` are patch-local; ``source_vertices`` and
    ``source_triangles`` map them back to the mesh they were taken from.
    """

    patch_id: int
    vertices: np.ndarray
    triangles: np.ndarray
    facet_normals: np.ndarray
    source_triangles: np.ndarray
    source_vertices: np.ndarray
    boundary: tuple[PolygonChain, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", frozen_array(self.vertices, np.float64, (3,)))
        object.__setattr__(self, "triangles", frozen_array(self.triangles, np.int64, (3,)))
        object.__setattr__(self, "facet_normals", frozen_array(self.facet_normals, np.float64, (3,)))
        object.__setattr__(self, "source_triangles", frozen_array(self.source_triangles, np.int64))
        object.__setattr__(self, "source_vertices", frozen_array(self.source_vertices, np.int64))

    @property
    def triangle_count(self) -> int:
        return int(len(self.triangles))

    @property
    def min_z(self) -> float:
        return float(self.vertices[:, 2].min())

    @property
    def xy_bounds(self) -> tuple[float, float, float, float]:
        lo = self.vertices[:, :2].min(axis=0)
        hi = self.vertices[:, :2].max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


@dataclass(frozen=True, eq=False)
class OffsetSurface:
    """Copy of a patch moved along its vertex normals; connectivity is unchanged."""

    source_patch_id: int
    offset_distance: float
    vertices: np.ndarray
    triangles: np.ndarray
    vertex_normals: np.ndarray
    facet_normals: np.ndarray
    self_intersecting: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", frozen_array(self.vertices, np.float64, (3,)))
        object.__setattr__(self, "triangles", frozen_array(self.triangles, np.int64, (3,)))
        object.__setattr__(self, "vertex_normals", frozen_array(self.vertex_normals, np.float64, (3,)))
        object.__setattr__(self, "facet_normals", frozen_array(self.facet_normals, np.float64, (3,)))

    @cached_property
    def boundary(self) -> tuple[PolygonChain, ...]:
        from app.slicer.nonplanar_id import surface_boundary

        return tuple(surface_boundary(self.vertices, self.triangles, entity=f"offset {self.offset_distance:g} of patch {self.source_patch_id}"))

    def as_patch(self) -> SurfacePatch:
        return SurfacePatch(
            patch_id=self.source_patch_id,
            vertices=self.vertices,
            triangles=self.triangles,
            facet_normals=self.facet_normals,
            source_triangles=np.arange(len(self.triangles)),
            source_vertices=np.arange(len(self.vertices)),
        )


class PathRole(str, Enum):
    OUTER_WALL = "outer_wall"
    INNER_WALL = "inner_wall"
    INFILL = "infill"


class PathKind(str, Enum):
    PLANAR = "planar"
    NONPLANAR = "nonplanar"


@dataclass(frozen=True)
class ToolpathPoint:
    position: tuple[float, float, float]
    orientation: tuple[float, float, float] = (0.0, 0.0, 1.0)
    extruding: bool = True


@dataclass(frozen=True, eq=False)
class Toolpath:
    """Ordered extruder moves; ``extruding[i]`` tells whether the move into point i deposits."""

    role: PathRole
    kind: PathKind
    layer: int
    positions: np.ndarray
    orientations: np.ndarray
    extruding: np.ndarray
    patch: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "positions", frozen_array(self.positions, np.float64, (3,)))
        object.__setattr__(self, "orientations", frozen_array(self.orientations, np.float64, (3,)))
        object.__setattr__(self, "extruding", frozen_array(self.extruding, bool))

    def __len__(self) -> int:
        return int(len(self.positions))

    @property
    def points(self) -> list[ToolpathPoint]:
        return [
            ToolpathPoint(tuple(map(float, p)), tuple(map(float, n)), bool(e))
            for p, n, e in zip(self.positions, self.orientations, self.extruding)
        ]

    def extruding_segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Start and end points of every depositing move."""
        mask = self.extruding[1:]
        return self.positions[:-1][mask], self.positions[1:][mask]


class PointSetLabel(str, Enum):
    SOURCE = "source"
    PLANAR = "planar-reconstruction"
    NONPLANAR = "nonplanar-reconstruction"


@dataclass(frozen=True, eq=False)
class PointSet:
    points: np.ndarray
    label: PointSetLabel
    grid_index: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", frozen_array(self.points, np.float64, (3,)))
        if self.grid_index is not None:
            object.__setattr__(self, "grid_index", frozen_array(self.grid_index, np.int64, (2,)))

    def __len__(self) -> int:
        return int(len(self.points))
