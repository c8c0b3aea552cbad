import numpy as np
import pytest
import shapely
from shapely import STRtree
from shapely.geometry import LineString, box

from app.models import SlicerConfig
from app.slicer.diagnostics import Diagnostics
from app.slicer.errors import DegenerateTriangleError, ProjectionMissError
from app.slicer.nonplanar_id import extract_nonplanar_surface
from app.slicer.projection import (
    SharedEdgeIndex,
    SurfaceProjector,
    barycentric,
    generate_nonplanar_layers,
    nonplanar_infill,
    nonplanar_walls,
    point_in_triangle,
    project_point,
    subdivide_at_shared_edges,
)
from app.slicer.spatial import barycentric_coordinates, triangle_normals
from app.slicer.surface_offset import offset_patch
from app.slicer.types import OffsetSurface, PathKind, PathRole


TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _surface(vertices, triangles, facet_normals=None) -> OffsetSurface:
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles)
    if facet_normals is None:
        facet_normals, _ = triangle_normals(vertices[triangles])
    return OffsetSurface(
        source_patch_id=0,
        offset_distance=0.0,
        vertices=vertices,
        triangles=triangles,
        vertex_normals=np.tile([0.0, 0.0, 1.0], (len(vertices), 1)),
        facet_normals=facet_normals,
    )


def _flat_square(size: float, z: float) -> OffsetSurface:
    vertices = [[0, 0, z], [size, 0, z], [size, size, z], [0, size, z]]
    return _surface(vertices, [[0, 1, 2], [0, 2, 3]])


def _surface_z(surface: OffsetSurface, xy: np.ndarray) -> np.ndarray:
    """Height of the surface under every point, NaN where no triangle covers it."""
    coords = surface.vertices[surface.triangles]
    tree = STRtree(shapely.polygons(coords[:, :, :2]))
    point_index, triangle_index = tree.query(shapely.points(xy), predicate="intersects")
    corners = coords[triangle_index]
    s, t = barycentric_coordinates(xy[point_index], corners[:, 0, :2], corners[:, 1, :2], corners[:, 2, :2])
    z = corners[:, :, 2]
    heights = np.full(len(xy), np.nan)
    heights[point_index] = z[:, 0] + s * (z[:, 1] - z[:, 0]) + t * (z[:, 2] - z[:, 0])
    return heights


def _extruding_points(toolpaths) -> np.ndarray:
    return np.vstack([toolpath.positions[1:-1] for toolpath in toolpaths])


def _sampled_segments(toolpaths, step: float) -> np.ndarray:
    chunks = []
    for toolpath in toolpaths:
        for a, b in zip(*toolpath.extruding_segments()):
            count = max(int(np.ceil(np.linalg.norm(b[:2] - a[:2]) / step)), 1)
            chunks.append(a + np.linspace(0.0, 1.0, count + 1)[:, None] * (b - a))
    return np.vstack(chunks)


@pytest.fixture(scope="module")
def cap_surface(hemisphere_mesh):
    patch = extract_nonplanar_surface(hemisphere_mesh, SlicerConfig())[0]
    return offset_patch(patch, -0.15)


@pytest.mark.parametrize(
    "point,expected",
    [((0.0, 0.0), (0.0, 0.0)), ((1 / 3, 1 / 3), (1 / 3, 1 / 3)), ((1.0, 0.0), (1.0, 0.0))],
)
def test_barycentric(point, expected):
    assert barycentric(point, TRIANGLE) == pytest.approx(expected)


def test_barycentric_rejects_degenerate_triangle():
    with pytest.raises(DegenerateTriangleError):
        barycentric((0.5, 0.5), [[0, 0], [1, 1], [2, 2]])


@pytest.mark.parametrize(
    "point,expected",
    [((1 / 3, 1 / 3), True), ((0.5, 0.5), True), ((0.5, -0.01), False)],
)
def test_point_in_triangle(point, expected):
    assert point_in_triangle(point, TRIANGLE) is expected


def test_flat_projection():
    point = project_point((1.3, 2.1), _flat_square(4.0, 5.0))

    assert point.position == pytest.approx((1.3, 2.1, 5.0))
    assert point.orientation == pytest.approx((0.0, 0.0, 1.0))


def test_shared_edge_orientation_averages_both_facets():
    vertices = [[-1, 0, 0], [0, 0, 0], [0, 1, 0], [1, 0, -0.75]]
    surface = _surface(vertices, [[0, 1, 2], [1, 3, 2]])

    point = project_point((0.0, 0.5), surface)

    assert point.orientation == pytest.approx((0.6 / np.sqrt(3.6), 0.0, 1.8 / np.sqrt(3.6)))
    assert point.position[2] == pytest.approx(0.0)


def test_slanted_plane_lift():
    surface = _surface([[0, 0, 0], [10, 0, 10], [0, 10, 0]], [[0, 1, 2]])

    assert project_point((2.0, 7.0), surface).position[2] == pytest.approx(2.0)


def test_projection_miss_carries_point():
    with pytest.raises(ProjectionMissError, match=r"projection miss.*\(9\.000000, 9\.000000\)"):
        project_point((9.0, 9.0), _flat_square(4.0, 5.0))


def test_segment_across_diagonal_gains_one_point():
    shared = SharedEdgeIndex(_flat_square(4.0, 0.0))

    path = subdivide_at_shared_edges(np.array([[1.0, 3.0], [3.0, 1.0]]), shared)

    assert len(shared) == 1
    np.testing.assert_allclose(path, [[1.0, 3.0], [2.0, 2.0], [3.0, 1.0]], atol=1e-9)


def test_segment_inside_one_triangle_is_unchanged():
    shared = SharedEdgeIndex(_flat_square(4.0, 0.0))
    segment = np.array([[3.0, 1.0], [3.5, 2.0]])

    assert subdivide_at_shared_edges(segment, shared).tolist() == segment.tolist()


def test_segment_across_fan_is_split_in_order():
    angles = np.radians(np.arange(11) * 18.0)
    rim = np.column_stack([5.0 * np.cos(angles), 5.0 * np.sin(angles), np.zeros(11)])
    vertices = np.vstack([[0.0, 0.0, 0.0], rim])
    triangles = [[0, k, k + 1] for k in range(1, 11)]
    shared = SharedEdgeIndex(_surface(vertices, triangles))

    path = subdivide_at_shared_edges(np.array([[-6.0, 1.0], [6.0, 1.0]]), shared)

    assert len(shared) == 9
    assert len(path) == 11
    assert (np.diff(path[:, 0]) > 0).all()
    assert np.allclose(path[:, 1], 1.0)


def test_flat_walls_are_level():
    surface = _flat_square(4.0, 5.0)

    walls = nonplanar_walls(list(surface.boundary), surface, SlicerConfig(wall_count=1))

    assert len(walls) == 1
    wall = walls[0]
    assert wall.role == PathRole.OUTER_WALL
    assert wall.kind == PathKind.NONPLANAR
    assert np.allclose(wall.positions[1:-1, 2], 5.0)
    assert wall.positions[0, 2] == pytest.approx(6.0)
    assert wall.positions[-1, 2] == pytest.approx(6.0)
    assert wall.extruding.tolist() == [False, False] + [True] * (len(wall) - 3) + [False]
    xy = wall.positions[1:-1, :2]
    assert [*xy.min(axis=0), *xy.max(axis=0)] == pytest.approx([0.2, 0.2, 3.8, 3.8])


def test_tiny_patch_gets_no_walls(config):
    surface = _flat_square(0.3, 1.0)
    diagnostics = Diagnostics()

    walls = nonplanar_walls(list(surface.boundary), surface, config, diagnostics=diagnostics)

    assert walls == []
    assert any("too small" in warning for warning in diagnostics.warnings)


def test_cap_walls_follow_the_surface(cap_surface, config):
    walls = nonplanar_walls(list(cap_surface.boundary), cap_surface, config)

    assert [wall.role for wall in walls] == [PathRole.OUTER_WALL, PathRole.INNER_WALL]
    points = _extruding_points(walls)
    assert np.abs(points[:, 2] - _surface_z(cap_surface, points[:, :2])).max() <= 1e-6
    for wall in walls:
        assert (wall.orientations[:, 2] > 0).all()
        assert np.allclose(np.linalg.norm(wall.orientations, axis=1), 1.0)


def test_cap_infill_segments_stay_on_the_surface(cap_surface, config):
    infill = nonplanar_infill(list(cap_surface.boundary), cap_surface, config, 0)

    assert infill
    for toolpath in infill:
        start, end = toolpath.extruding_segments()
        for fraction in (0.25, 0.5, 0.75):
            samples = start + fraction * (end - start)
            deviation = np.abs(samples[:, 2] - _surface_z(cap_surface, samples[:, :2]))
            assert np.nanmax(deviation) <= 1e-6


def test_cap_paths_conform_between_vertices(cap_surface, config):
    boundary = list(cap_surface.boundary)
    toolpaths = nonplanar_walls(boundary, cap_surface, config) + nonplanar_infill(boundary, cap_surface, config, 1)
    vertices = np.vstack([toolpath.positions for toolpath in toolpaths])

    for points in (vertices, _sampled_segments(toolpaths, 0.01)):
        heights = _surface_z(cap_surface, points[:, :2])
        assert np.isfinite(heights).mean() > 0.99
        assert np.nanmax(np.abs(points[:, 2] - heights)) <= 1e-6


def test_flat_infill_is_level(config):
    surface = _flat_square(4.0, 5.0)

    infill = nonplanar_infill(list(surface.boundary), surface, config, 0)

    points = _extruding_points(infill)
    assert np.allclose(points[:, 2], 5.0)
    assert points[:, :2].min() >= 1.0 - 1e-9
    assert points[:, :2].max() <= 3.0 + 1e-9


def test_infill_avoids_the_hole(holed_box_mesh, config):
    patch = extract_nonplanar_surface(holed_box_mesh, config)[0]
    surface = offset_patch(patch, -0.15)
    hole = box(5.0, 5.0, 15.0, 15.0).buffer(-1e-6)

    infill = nonplanar_infill(list(surface.boundary), surface, config, 0)

    assert infill
    for toolpath in infill:
        start, end = toolpath.extruding_segments()
        for a, b in zip(start, end):
            assert not LineString([a[:2], b[:2]]).intersects(hole)


def test_layers_stack_on_flat_patch(cube_mesh, config):
    patch = extract_nonplanar_surface(cube_mesh, config)[0]

    layers = generate_nonplanar_layers(patch, config, first_layer_index=66)

    assert [layer.index for layer in layers] == [66, 67]
    heights = [float(layer.walls[0].positions[1, 2]) for layer in layers]
    assert heights == pytest.approx([19.55, 19.85])
    for layer in layers:
        assert all(toolpath.layer == layer.index for toolpath in layer.toolpaths)
        assert all(toolpath.patch == patch.patch_id for toolpath in layer.toolpaths)
        assert layer.infill
    assert layers[0].toolpaths[-1].role == PathRole.INFILL


def test_layers_use_given_surfaces(cube_mesh, config):
    patch = extract_nonplanar_surface(cube_mesh, config)[0]

    layers = generate_nonplanar_layers(patch, config, surfaces=[offset_patch(patch, -0.15)])

    assert len(layers) == 1
    assert layers[0].surface.offset_distance == pytest.approx(-0.15)


def test_projector_reports_surface_top(cap_surface):
    projector = SurfaceProjector(cap_surface)

    assert projector.max_z == pytest.approx(cap_surface.vertices[:, 2].max())
