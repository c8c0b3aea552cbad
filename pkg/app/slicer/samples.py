from __future__ import annotations

from pathlib import Path
from typing import Callable
import logging

import numpy as np

from app.constants import LOGGER_NAME
from app.slicer.mesh_io import mesh_from_indexed, write_stl
from app.slicer.types import TriangleMesh


logger = logging.getLogger(LOGGER_NAME)

HeightFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


def height_field_solid(
    xs: np.ndarray,
    ys: np.ndarray,
    top: HeightFunction,
    *,
    mask: np.ndarray | None = None,
    bottom: float = 0.0,
) -> TriangleMesh:
    """
    Watertight solid between z = bottom and z = top(x, y) over the masked grid cells.

    Masks must not contain cells touching only at a corner (the result would be non-manifold).
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    nx, ny = len(xs) - 1, len(ys) - 1
    mask = np.ones((nx, ny), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (nx, ny):
        raise ValueError(f"Mask shape {mask.shape} does not match the {nx}x{ny} grid")

    grid_x, grid_y = np.meshgrid(xs, ys, indexing="ij")
    heights = np.broadcast_to(np.asarray(top(grid_x, grid_y), dtype=np.float64), grid_x.shape)
    if (heights[:-1, :-1][mask] <= bottom).any():
        raise ValueError("Top surface must lie above the bottom plane")

    node_count = (nx + 1) * (ny + 1)

    def node(i: int, j: int) -> int:
        return i * (ny + 1) + j

    def filled(i: int, j: int) -> bool:
        return 0 <= i < nx and 0 <= j < ny and bool(mask[i, j])

    triangles: list[tuple[int, int, int]] = []
    for i, j in np.argwhere(mask).tolist():
        n00, n10, n11, n01 = node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)
        triangles.append((n00, n10, n11))
        triangles.append((n00, n11, n01))
        triangles.append((n00 + node_count, n11 + node_count, n10 + node_count))
        triangles.append((n00 + node_count, n01 + node_count, n11 + node_count))

        # boundary edges run with the cell on their left
        for a, b, neighbour in (
            (n00, n10, (i, j - 1)),
            (n10, n11, (i + 1, j)),
            (n11, n01, (i, j + 1)),
            (n01, n00, (i - 1, j)),
        ):
            if not filled(*neighbour):
                triangles.append((a + node_count, b + node_count, b))
                triangles.append((a + node_count, b, a))

    tops = np.column_stack([grid_x.reshape(-1), grid_y.reshape(-1), heights.reshape(-1)])
    bottoms = np.column_stack([grid_x.reshape(-1), grid_y.reshape(-1), np.full(node_count, bottom)])
    vertices = np.vstack([tops, bottoms])

    used, compact = np.unique(np.array(triangles, dtype=np.int64), return_inverse=True)
    return mesh_from_indexed(vertices[used], compact.reshape(-1, 3))


def _axis(start: float, stop: float, cells: int) -> np.ndarray:
    return np.linspace(start, stop, cells + 1)


def cube(size: float = 20.0) -> TriangleMesh:
    """Axis-aligned cube with one corner at the origin: 8 vertices, 12 triangles."""
    return height_field_solid(np.array([0.0, size]), np.array([0.0, size]), lambda x, y: np.full_like(x, size))


def box_with_square_hole(size: float = 20.0, hole: float = 10.0, height: float = 10.0) -> TriangleMesh:
    """Square block with a centred square through-hole."""
    if not 0 < hole < size:
        raise ValueError(f"Hole size must lie in (0, {size}), got {hole}")
    edges = np.array([0.0, (size - hole) / 2.0, (size + hole) / 2.0, size])
    mask = np.ones((3, 3), dtype=bool)
    mask[1, 1] = False
    return height_field_solid(edges, edges, lambda x, y: np.full_like(x, height), mask=mask)


def hemisphere(radius: float = 20.0, segments: int = 48, rings: int | None = None) -> TriangleMesh:
    """Upper half sphere centred at the origin, closed by a flat disk at z = 0."""
    rings = rings or max(segments // 4, 2)
    azimuth = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    polar = np.linspace(0.0, np.pi / 2.0, rings + 1)[1:]

    vertices = [np.array([0.0, 0.0, radius])]
    for phi in polar:
        ring = np.column_stack([
            radius * np.sin(phi) * np.cos(azimuth),
            radius * np.sin(phi) * np.sin(azimuth),
            np.full(segments, radius * np.cos(phi)),
        ])
        vertices.append(ring)
    vertices.append(np.array([0.0, 0.0, 0.0]))
    vertices = np.vstack(vertices)
    # the equator ring sits exactly on the base plane
    vertices[1 + (rings - 1) * segments:1 + rings * segments, 2] = 0.0

    def ring_vertex(k: int, i: int) -> int:
        return 1 + k * segments + i % segments

    triangles = []
    for i in range(segments):
        triangles.append((0, ring_vertex(0, i), ring_vertex(0, i + 1)))
    for k in range(rings - 1):
        for i in range(segments):
            upper, upper_next = ring_vertex(k, i), ring_vertex(k, i + 1)
            lower, lower_next = ring_vertex(k + 1, i), ring_vertex(k + 1, i + 1)
            triangles.append((upper, lower, lower_next))
            triangles.append((upper, lower_next, upper_next))
    centre = len(vertices) - 1
    for i in range(segments):
        triangles.append((centre, ring_vertex(rings - 1, i + 1), ring_vertex(rings - 1, i)))
    return mesh_from_indexed(vertices, np.array(triangles))


def freeform_dome(size: float = 40.0, cells: int = 40) -> TriangleMesh:
    """Square block with a paraboloid top: 10 mm at the corners, 15 mm in the centre, slope below 20 deg."""
    half = size / 2.0
    corner = 2.0 * half * half

    def top(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return 10.0 + 5.0 * (1.0 - (x * x + y * y) / corner)

    return height_field_solid(_axis(-half, half, cells), _axis(-half, half, cells), top)


def mouse_shell(length: float = 60.0, width: float = 30.0, cells: tuple[int, int] = (60, 30)) -> TriangleMesh:
    """Elongated freeform shell with a rectangular through-hole in the middle."""
    xs = _axis(-length / 2.0, length / 2.0, cells[0])
    ys = _axis(-width / 2.0, width / 2.0, cells[1])

    def top(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return 8.0 + 6.0 * (1.0 - (x / 40.0) ** 2 - (y / 20.0) ** 2)

    centres_x = (xs[:-1] + xs[1:]) / 2.0
    centres_y = (ys[:-1] + ys[1:]) / 2.0
    hole = (np.abs(centres_x)[:, None] < 4.0) & (np.abs(centres_y)[None, :] < 3.0)
    return height_field_solid(xs, ys, top, mask=~hole)


def _spherical_caps(centres: list[tuple[float, float]], base: float, radius: float, base_radius: float) -> HeightFunction:
    sink = np.sqrt(radius * radius - base_radius * base_radius)

    def top(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        z = np.full_like(x, base)
        for cx, cy in centres:
            r2 = (x - cx) ** 2 + (y - cy) ** 2
            cap = np.sqrt(np.clip(radius * radius - r2, 0.0, None)) - sink
            z = np.maximum(z, base + np.where(r2 < base_radius * base_radius, cap, 0.0))
        return z

    return top


def dome_on_plate(radius: float = 15.0, base_radius: float = 10.0, plate: tuple[float, float, float] = (40.0, 40.0, 5.0)) -> TriangleMesh:
    """Plate with one spherical cap in its centre."""
    length, width, thickness = plate
    top = _spherical_caps([(0.0, 0.0)], thickness, radius, base_radius)
    return height_field_solid(
        _axis(-length / 2.0, length / 2.0, int(round(length))),
        _axis(-width / 2.0, width / 2.0, int(round(width))),
        top,
    )


def two_dome_plate(radius: float = 15.0, base_radius: float = 10.0, plate: tuple[float, float, float] = (60.0, 40.0, 5.0)) -> TriangleMesh:
    """Plate with two spherical caps side by side."""
    length, width, thickness = plate
    offset = length / 4.0
    top = _spherical_caps([(-offset, 0.0), (offset, 0.0)], thickness, radius, base_radius)
    return height_field_solid(
        _axis(-length / 2.0, length / 2.0, int(round(length))),
        _axis(-width / 2.0, width / 2.0, int(round(width))),
        top,
    )


def ridge(length: float = 20.0, width: float = 10.0, cell: float = 0.25, slope: float = 0.5) -> TriangleMesh:
    """Roof-shaped block; offsets into it collapse the narrow cells along the ridge line."""
    half = length / 2.0

    def top(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return 5.0 + slope * (half - np.abs(x))

    return height_field_solid(
        _axis(-half, half, int(round(length / cell))),
        _axis(-width / 2.0, width / 2.0, int(round(width))),
        top,
    )


SAMPLES: dict[str, Callable[[], TriangleMesh]] = {
    "cube": cube,
    "box_with_square_hole": box_with_square_hole,
    "hemisphere": hemisphere,
    "freeform_dome": freeform_dome,
    "mouse_shell": mouse_shell,
    "dome_on_plate": dome_on_plate,
    "two_dome_plate": two_dome_plate,
    "ridge": ridge,
}


def write_samples(directory: str | Path) -> list[Path]:
    """Write every bundled sample as a binary STL."""
    directory = Path(directory)
    paths = []
    for name, build in SAMPLES.items():
        mesh = build()
        paths.append(write_stl(mesh, directory / f"{name}.stl", name=name))
        logger.info("[%s] Wrote sample: %d triangles", name, mesh.triangle_count)
    return paths
