import numpy as np
import pytest

from app.models import ExtruderBox, SlicerConfig
from app.slicer import samples
from app.slicer.errors import OpenBoundaryError
from app.slicer.mesh_io import mesh_from_indexed
from app.slicer.nonplanar_id import (
    classify_triangle,
    classify_triangles,
    collision_test,
    extract_boundary,
    extract_nonplanar_surface,
    occlusion_test,
    surface_boundary,
    threshold_angle,
)
from app.slicer.types import Orientation


def _box(lo, hi):
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    return samples.height_field_solid(np.array([x0, x1]), np.array([y0, y1]), lambda x, y: np.full_like(x, z1), bottom=z0)


def _merge(*meshes):
    vertices = []
    triangles = []
    offset = 0
    for mesh in meshes:
        vertices.append(mesh.vertices)
        triangles.append(mesh.triangles + offset)
        offset += mesh.vertex_count
    return mesh_from_indexed(np.vstack(vertices), np.vstack(triangles))


def test_threshold_angle_values():
    assert threshold_angle(0.3, 0.4) == pytest.approx(36.8699, abs=1e-4)
    assert threshold_angle(0.4, 0.4) == pytest.approx(45.0)


def test_threshold_angle_rejects_zero_width():
    with pytest.raises(ValueError):
        threshold_angle(0.3, 0.0)


@pytest.mark.parametrize(
    "normal,expected",
    [
        ((0.0, 0.0, 1.0), True),
        ((0.0, 0.0, -1.0), False),
        ((1.0, 0.0, 0.0), False),
    ],
)
def test_classify_triangle(normal, expected):
    assert classify_triangle(normal, 36.87) is expected


def test_classification_ignores_rotation_about_z():
    tilt = np.radians(30.0)
    normals = np.array([
        [np.sin(tilt) * np.cos(a), np.sin(tilt) * np.sin(a), np.cos(tilt)]
        for a in np.linspace(0.0, 2.0 * np.pi, 12, endpoint=False)
    ])

    assert classify_triangles(normals, 36.87).all()
    assert not classify_triangles(normals, 25.0).any()


def test_raising_threshold_only_adds_triangles(hemisphere_mesh):
    low = classify_triangles(hemisphere_mesh.facet_normals, 30.0)
    high = classify_triangles(hemisphere_mesh.facet_normals, 45.0)

    assert not (low & ~high).any()
    assert high.sum() > low.sum()


def test_occlusion_on_cube(cube_mesh):
    assert occlusion_test((0.0, 0.0, 20.0), cube_mesh) is False
    assert occlusion_test((0.0, 0.0, 0.0), cube_mesh) is True


def test_occlusion_under_overhang():
    mesh = _merge(_box((0, 0, 0), (2, 2, 1)), _box((-1, -1, 5), (3, 3, 6)))

    assert occlusion_test((0.0, 0.0, 1.0), mesh) is True
    assert occlusion_test((0.0, 0.0, 6.0), mesh) is False


def test_collision_clear_above_dome_apex(hemisphere_mesh):
    assert collision_test((0.0, 0.0, 20.0), hemisphere_mesh, (10.0, 10.0, 30.0)) is False


def test_collision_in_narrow_groove():
    mesh = _merge(
        _box((0, 0, 0), (4, 10, 10)),
        _box((6, 0, 0), (10, 10, 10)),
        _box((4, 0, 0), (6, 10, 2)),
    )

    assert collision_test((5.0, 5.0, 2.0), mesh, (10.0, 10.0, 30.0)) is True
    assert collision_test((5.0, 5.0, 2.0), mesh, (1.0, 1.0, 10.0)) is False


def test_zero_size_box_never_collides(cube_mesh):
    assert collision_test((10.0, 10.0, 20.0), cube_mesh, (0.0, 0.0, 0.0)) is False


def test_cube_top_is_one_patch(cube_mesh, config):
    patches = extract_nonplanar_surface(cube_mesh, config)

    assert len(patches) == 1
    patch = patches[0]
    assert patch.triangle_count == 2
    assert np.allclose(patch.vertices[:, 2], 20.0)
    assert len(patch.boundary) == 1
    assert len(patch.boundary[0]) == 4
    assert patch.boundary[0].orientation == Orientation.CCW


def test_hemisphere_patch_matches_angle_oracle(hemisphere_mesh, config):
    patches = extract_nonplanar_surface(hemisphere_mesh, config)

    assert len(patches) == 1
    expected = np.flatnonzero(classify_triangles(hemisphere_mesh.facet_normals, config.threshold_angle_deg))
    assert np.array_equal(np.sort(patches[0].source_triangles), expected)

    rim = patches[0].boundary[0].vertices
    radii = np.linalg.norm(rim, axis=1)
    assert np.allclose(radii, 20.0 * np.sin(np.radians(config.threshold_angle_deg)), atol=1.6)


def test_separate_domes_give_two_patches(config):
    left = samples.hemisphere(10.0, 32)
    right = mesh_from_indexed(left.vertices + np.array([30.0, 0.0, 0.0]), left.triangles)

    patches = extract_nonplanar_surface(_merge(left, right), config)

    assert [patch.patch_id for patch in patches] == [0, 1]
    assert patches[0].xy_bounds[2] < 15.0 < patches[1].xy_bounds[0]


def test_vertical_threshold_selects_every_upward_triangle(hemisphere_mesh):
    config = SlicerConfig(threshold_angle_deg=90.0, occlusion_check=False, collision_check=False)

    patches = extract_nonplanar_surface(hemisphere_mesh, config)

    selected = np.sort(np.concatenate([patch.source_triangles for patch in patches]))
    assert np.array_equal(selected, np.flatnonzero(hemisphere_mesh.facet_normals[:, 2] > 0))


def test_annular_top_has_one_hole(holed_box_mesh, config):
    patches = extract_nonplanar_surface(holed_box_mesh, config)

    assert len(patches) == 1
    boundary = extract_boundary(patches[0])
    assert [chain.is_hole for chain in boundary] == [False, True]
    assert boundary[1].parent == 0
    assert abs(boundary[0].signed_area) == pytest.approx(400.0)
    assert boundary[1].signed_area == pytest.approx(-100.0)


def test_disabled_checks_do_not_reject(cube_mesh):
    config = SlicerConfig(extruder_box=ExtruderBox(width=0, depth=0, height=0), occlusion_check=False)

    assert len(extract_nonplanar_surface(cube_mesh, config)) == 1


def test_open_boundary_is_reported():
    vertices = np.array([[0, 0, 0], [1, 0, 0], [0.5, 1, 0], [0.5, -1, 0], [0.5, 2, 0.5]], dtype=float)
    triangles = np.array([[0, 1, 2], [1, 0, 3], [0, 1, 4]])

    with pytest.raises(OpenBoundaryError, match="open non-planar boundary"):
        surface_boundary(vertices, triangles, entity="fan")
