from __future__ import annotations

from collections import defaultdict
from pathlib import Path
import logging
import os
import re
import tempfile

import numpy as np
from scipy.spatial import cKDTree

from app.constants import DEFAULT_WELD_TOLERANCE, DEGENERATE_TRIANGLE_AREA, LOGGER_NAME
from app.slicer.errors import MeshFormatError
from app.slicer.spatial import triangle_normals
from app.slicer.types import TriangleMesh


logger = logging.getLogger(LOGGER_NAME)

BINARY_HEADER_BYTES = 80
BINARY_RECORD_DTYPE = np.dtype([
    ("normal", "<f4", (3,)),
    ("vertices", "<f4", (3, 3)),
    ("attribute", "<u2"),
])

_TOKEN_PATTERN = re.compile(rb"\S+")
_SOLID_PATTERN = re.compile(rb"^\s*solid\b")
_FACET_PATTERN = re.compile(rb"\bfacet\b")


def load_stl(path: str | Path, *, weld_tolerance: float = DEFAULT_WELD_TOLERANCE) -> TriangleMesh:
    """
    Read a binary or ASCII STL file into a welded, indexed mesh.

    Args:
        path: STL file path
        weld_tolerance: Vertices closer than this are merged (mm)

    Returns:
        TriangleMesh with recomputed normals where the stored ones are unusable

    Raises:
        MeshFormatError: If the file is truncated, malformed or holds no triangles
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise MeshFormatError(f"cannot read STL file: {e.strerror or e}", entity=str(path)) from e

    if is_ascii_stl(data):
        raw, stored_normals = _parse_ascii(data, path)
        fmt = "ascii"
    else:
        raw, stored_normals = _parse_binary(data, path)
        fmt = "binary"

    if len(raw) == 0:
        raise MeshFormatError("STL contains zero triangles", entity=str(path))

    mesh = weld_vertices(raw, weld_tolerance, stored_normals=stored_normals)
    logger.info(
        "[%s] Loaded %s STL: %d facets -> %d triangles, %d vertices (%d degenerate dropped)",
        path.name,
        fmt,
        len(raw),
        mesh.triangle_count,
        mesh.vertex_count,
        mesh.dropped_triangles,
    )
    return mesh


def is_ascii_stl(data: bytes) -> bool:
    return bool(_SOLID_PATTERN.match(data)) and _FACET_PATTERN.search(data) is not None


def _parse_binary(data: bytes, path: Path) -> tuple[np.ndarray, np.ndarray]:
    if len(data) < BINARY_HEADER_BYTES + 4:
        raise MeshFormatError("truncated header", entity=str(path))

    declared = int(np.frombuffer(data, dtype="<u4", count=1, offset=BINARY_HEADER_BYTES)[0])
    available = (len(data) - BINARY_HEADER_BYTES - 4) // BINARY_RECORD_DTYPE.itemsize
    if declared > available:
        raise MeshFormatError(
            f"truncated body: header declares {declared} triangles but only {available} records are present",
            entity=str(path),
        )

    records = np.frombuffer(data, dtype=BINARY_RECORD_DTYPE, count=declared, offset=BINARY_HEADER_BYTES + 4)
    return records["vertices"].astype(np.float64), records["normal"].astype(np.float64)


def _parse_ascii(data: bytes, path: Path) -> tuple[np.ndarray, np.ndarray]:
    tokens: list[tuple[str, int]] = []
    line = 1
    last = 0
    for match in _TOKEN_PATTERN.finditer(data):
        line += data.count(b"\n", last, match.start())
        last = match.start()
        tokens.append((match.group().decode("ascii", errors="replace"), line))

    triangles: list[list[list[float]]] = []
    normals: list[list[float]] = []
    position = 0

    def fail(message: str, at: int) -> MeshFormatError:
        token_line = tokens[at][1] if at < len(tokens) else (tokens[-1][1] if tokens else 1)
        return MeshFormatError(f"line {token_line}: {message}", entity=str(path))

    def expect(keyword: str) -> None:
        nonlocal position
        if position >= len(tokens):
            raise fail(f"expected '{keyword}', got end of file", position)
        if tokens[position][0].lower() != keyword:
            raise fail(f"expected '{keyword}', got '{tokens[position][0]}'", position)
        position += 1

    def read_floats(count: int) -> list[float]:
        nonlocal position
        values = []
        for _ in range(count):
            if position >= len(tokens):
                raise fail("expected a number, got end of file", position)
            try:
                values.append(float(tokens[position][0]))
            except ValueError as e:
                raise fail(f"expected a number, got '{tokens[position][0]}'", position) from e
            position += 1
        return values

    def skip_line() -> None:
        nonlocal position
        current = tokens[position - 1][1]
        while position < len(tokens) and tokens[position][1] == current:
            position += 1

    while position < len(tokens):
        expect("solid")
        # the solid name is the rest of its line and may contain keywords
        skip_line()

        while position < len(tokens) and tokens[position][0].lower() == "facet":
            position += 1
            expect("normal")
            normals.append(read_floats(3))
            expect("outer")
            expect("loop")
            facet = []
            for _ in range(3):
                expect("vertex")
                facet.append(read_floats(3))
            expect("endloop")
            expect("endfacet")
            triangles.append(facet)

        expect("endsolid")
        skip_line()

    return np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3), np.asarray(normals, dtype=np.float64).reshape(-1, 3)


def weld_vertices(
    raw_triangles: np.ndarray,
    tol: float = DEFAULT_WELD_TOLERANCE,
    *,
    stored_normals: np.ndarray | None = None,
) -> TriangleMesh:
    """
    Merge vertices closer than ``tol`` and index the triangles.

    Representatives are chosen first-seen; triangles that collapse to fewer than
    three distinct vertices (or to zero area) are dropped and counted.
    """
    if tol < 0:
        raise ValueError(f"Weld tolerance must be non-negative, got {tol}")

    raw = np.asarray(raw_triangles, dtype=np.float64).reshape(-1, 3, 3)
    flat = raw.reshape(-1, 3)
    if not len(flat):
        return mesh_from_indexed(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    unique, first_index, inverse = np.unique(flat, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # reorder exact duplicates so unique ids follow first appearance
    order = np.argsort(first_index, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    points = unique[order]
    point_of_corner = rank[inverse]

    representative = np.arange(len(points))
    if tol > 0 and len(points) > 1:
        tree = cKDTree(points)
        neighbors = tree.query_ball_point(points, r=tol)
        for i, near in enumerate(neighbors):
            earlier = [j for j in near if j < i and representative[j] == j]
            if earlier:
                representative[i] = min(earlier)

    kept_points, compact = np.unique(representative, return_inverse=True)
    # np.unique sorts representatives ascending, which preserves first-seen order
    vertices = points[kept_points]
    triangles = compact[point_of_corner].reshape(-1, 3)

    distinct = (
        (triangles[:, 0] != triangles[:, 1])
        & (triangles[:, 1] != triangles[:, 2])
        & (triangles[:, 0] != triangles[:, 2])
    )
    _, double_area = triangle_normals(vertices[triangles]) if len(triangles) else (None, np.zeros(0))
    keep = distinct & (0.5 * double_area > DEGENERATE_TRIANGLE_AREA)
    dropped = int((~keep).sum())
    if dropped:
        logger.warning("Dropped %d degenerate triangles while welding", dropped)

    normals = None
    if stored_normals is not None:
        normals = np.asarray(stored_normals, dtype=np.float64).reshape(-1, 3)[keep]

    return mesh_from_indexed(vertices, triangles[keep], stored_normals=normals, dropped_triangles=dropped)


def mesh_from_indexed(
    vertices: np.ndarray,
    triangles: np.ndarray,
    *,
    stored_normals: np.ndarray | None = None,
    dropped_triangles: int = 0,
) -> TriangleMesh:
    """Build a TriangleMesh from indexed data without welding."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise ValueError("Triangle references a vertex index out of range")

    normals, _ = triangle_normals(vertices[triangles]) if len(triangles) else (np.zeros((0, 3)), None)
    if stored_normals is not None and len(stored_normals) == len(normals):
        stored = np.asarray(stored_normals, dtype=np.float64)
        lengths = np.linalg.norm(stored, axis=1)
        unit = stored / np.where(lengths > 0, lengths, 1.0)[:, None]
        agrees = (lengths > 0) & (np.einsum("ij,ij->i", unit, normals) > 0)
        normals = np.where(agrees[:, None], unit, normals)

    return TriangleMesh(
        vertices=vertices,
        triangles=triangles,
        facet_normals=normals,
        edge_adjacency=build_edge_adjacency(triangles),
        dropped_triangles=dropped_triangles,
    )


def build_edge_adjacency(mesh_or_triangles: TriangleMesh | np.ndarray) -> dict[tuple[int, int], list[int]]:
    """Map every undirected edge (low, high) to its incident triangles in index order."""
    triangles = mesh_or_triangles.triangles if isinstance(mesh_or_triangles, TriangleMesh) else mesh_or_triangles
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    adjacency: dict[tuple[int, int], list[int]] = defaultdict(list)
    for index, (a, b, c) in enumerate(triangles.tolist()):
        for u, v in ((a, b), (b, c), (c, a)):
            adjacency[(u, v) if u < v else (v, u)].append(index)
    return dict(adjacency)


def write_stl(mesh: TriangleMesh, path: str | Path, *, ascii: bool = False, name: str = "slicer") -> Path:
    """Write the mesh as binary (float32) or ASCII STL, atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coords = mesh.triangle_coordinates

    if ascii:
        lines = [f"solid {name}"]
        for normal, facet in zip(mesh.facet_normals, coords):
            lines.append("  facet normal {:.9e} {:.9e} {:.9e}".format(*normal))
            lines.append("    outer loop")
            for vertex in facet:
                lines.append("      vertex {:.9e} {:.9e} {:.9e}".format(*vertex))
            lines.append("    endloop")
            lines.append("  endfacet")
        lines.append(f"endsolid {name}")
        payload = ("\n".join(lines) + "\n").encode("ascii")
    else:
        records = np.zeros(mesh.triangle_count, dtype=BINARY_RECORD_DTYPE)
        records["normal"] = mesh.facet_normals
        records["vertices"] = coords
        header = f"binary STL written by {name}".encode("ascii")[:BINARY_HEADER_BYTES].ljust(BINARY_HEADER_BYTES, b" ")
        payload = header + np.array(mesh.triangle_count, dtype="<u4").tobytes() + records.tobytes()

    with tempfile.NamedTemporaryFile("wb", dir=path.parent, delete=False) as tmp_file:
        tmp_file.write(payload)
        tmp_path = Path(tmp_file.name)
    os.replace(tmp_path, path)
    return path
