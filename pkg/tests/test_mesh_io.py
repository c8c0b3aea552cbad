import numpy as np
import pytest

from app.slicer.errors import MeshFormatError
from app.slicer.mesh_io import build_edge_adjacency, is_ascii_stl, load_stl, mesh_from_indexed, weld_vertices, write_stl


ONE_FACET_ASCII = """solid one facet
  facet normal 0 0 0
    outer loop
      vertex 0 0 0
      vertex 1 0 0
      vertex 0 1 0
    endloop
  endfacet
endsolid one facet
"""


def _binary_stl(triangles: np.ndarray, declared: int | None = None) -> bytes:
    records = np.zeros(len(triangles), dtype=[("normal", "<f4", (3,)), ("vertices", "<f4", (3, 3)), ("attribute", "<u2")])
    records["vertices"] = triangles
    count = len(triangles) if declared is None else declared
    return b"\0" * 80 + np.array(count, dtype="<u4").tobytes() + records.tobytes()


def test_ascii_single_facet_recomputes_normal(tmp_path):
    path = tmp_path / "one.stl"
    path.write_text(ONE_FACET_ASCII)

    mesh = load_stl(path)

    assert mesh.triangle_count == 1
    assert mesh.vertex_count == 3
    assert mesh.facet_normals[0] == pytest.approx([0.0, 0.0, 1.0])


def test_binary_cube_welds_to_eight_vertices(tmp_path, cube_mesh):
    raw = cube_mesh.triangle_coordinates
    path = tmp_path / "cube.stl"
    path.write_bytes(_binary_stl(raw))

    mesh = load_stl(path)

    assert mesh.triangle_count == 12
    assert mesh.vertex_count == 8
    assert mesh.is_watertight
    assert mesh.signed_volume == pytest.approx(8000.0)


def test_truncated_binary_body(tmp_path, cube_mesh):
    path = tmp_path / "short.stl"
    path.write_bytes(_binary_stl(cube_mesh.triangle_coordinates[:4], declared=10))

    with pytest.raises(MeshFormatError, match="truncated body"):
        load_stl(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "tiny.stl"
    path.write_bytes(b"\0" * 20)

    with pytest.raises(MeshFormatError, match="truncated header"):
        load_stl(path)


def test_zero_triangles(tmp_path):
    path = tmp_path / "empty.stl"
    path.write_bytes(_binary_stl(np.zeros((0, 3, 3))))

    with pytest.raises(MeshFormatError, match="zero triangles"):
        load_stl(path)


def test_ascii_grammar_error_reports_line(tmp_path):
    path = tmp_path / "bad.stl"
    path.write_text(ONE_FACET_ASCII.replace("vertex 1 0 0", "vertex 1 zero 0"))

    with pytest.raises(MeshFormatError, match="line 5"):
        load_stl(path)


def test_missing_file_is_a_mesh_error(tmp_path):
    with pytest.raises(MeshFormatError, match="cannot read"):
        load_stl(tmp_path / "missing.stl")


def test_ascii_detection_requires_facet_token():
    assert is_ascii_stl(ONE_FACET_ASCII.encode())
    assert not is_ascii_stl(b"solid header of a binary file" + b"\0" * 60)


@pytest.mark.parametrize("ascii", [False, True])
def test_write_then_load_keeps_geometry(tmp_path, hemisphere_mesh, ascii):
    path = write_stl(hemisphere_mesh, tmp_path / "hemisphere.stl", ascii=ascii)

    mesh = load_stl(path)

    assert mesh.triangle_count == hemisphere_mesh.triangle_count
    assert mesh.vertex_count == hemisphere_mesh.vertex_count
    assert np.allclose(mesh.vertices, hemisphere_mesh.vertices, atol=1e-5)
    assert mesh.is_watertight


def test_exact_duplicates_share_an_edge():
    raw = np.array([
        [[0, 0, 0], [1, 0, 0], [1, 1, 0]],
        [[0, 0, 0], [1, 1, 0], [0, 1, 0]],
    ], dtype=float)

    mesh = weld_vertices(raw, 0.0)

    assert mesh.vertex_count == 4
    assert mesh.edge_adjacency[(0, 2)] == [0, 1]


def test_zero_tolerance_keeps_close_vertices_apart():
    raw = np.array([
        [[0, 0, 0], [1, 0, 0], [1, 1, 0]],
        [[1e-7, 0, 0], [1, 1, 0], [0, 1, 0]],
    ], dtype=float)

    assert weld_vertices(raw, 0.0).vertex_count == 5
    assert weld_vertices(raw, 1e-6).vertex_count == 4


def test_collapsed_sliver_is_dropped_and_counted():
    raw = np.array([
        [[0, 0, 0], [1, 0, 0], [0, 1, 0]],
        [[5, 5, 0], [5 + 1e-8, 5, 0], [5, 5 + 1e-8, 0]],
    ], dtype=float)

    mesh = weld_vertices(raw, 1e-6)

    assert mesh.triangle_count == 1
    assert mesh.dropped_triangles == 1


def test_negative_weld_tolerance_rejected():
    with pytest.raises(ValueError):
        weld_vertices(np.zeros((1, 3, 3)), -1.0)


def test_cube_edges_all_have_two_triangles(cube_mesh):
    adjacency = build_edge_adjacency(cube_mesh)

    assert len(adjacency) == 18
    assert all(len(incident) == 2 for incident in adjacency.values())
    assert sum(len(incident) for incident in adjacency.values()) == 3 * cube_mesh.triangle_count


def test_single_triangle_has_three_boundary_edges():
    mesh = mesh_from_indexed(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float), np.array([[0, 1, 2]]))

    assert len(mesh.boundary_edges) == 3


def test_grid_of_eight_triangles_edge_counts():
    xs, ys = np.meshgrid(np.arange(3.0), np.arange(3.0), indexing="ij")
    vertices = np.column_stack([xs.reshape(-1), ys.reshape(-1), np.zeros(9)])
    triangles = []
    for i in range(2):
        for j in range(2):
            a, b, c, d = 3 * i + j, 3 * (i + 1) + j, 3 * (i + 1) + j + 1, 3 * i + j + 1
            triangles.extend([(a, b, c), (a, c, d)])

    adjacency = build_edge_adjacency(np.array(triangles))

    boundary = [edge for edge, incident in adjacency.items() if len(incident) == 1]
    internal = [edge for edge, incident in adjacency.items() if len(incident) == 2]
    assert len(boundary) == 8
    assert len(internal) == 8


def test_stored_normal_against_winding_is_replaced():
    vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)

    mesh = mesh_from_indexed(vertices, np.array([[0, 1, 2]]), stored_normals=np.array([[0.0, 0.0, -1.0]]))

    assert mesh.facet_normals[0] == pytest.approx([0.0, 0.0, 1.0])


def test_out_of_range_index_rejected():
    with pytest.raises(ValueError, match="out of range"):
        mesh_from_indexed(np.zeros((3, 3)), np.array([[0, 1, 3]]))
