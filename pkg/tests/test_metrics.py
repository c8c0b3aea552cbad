import numpy as np
import pytest

from app.models import JobConfig
from app.services.slicing_service import SlicingService
from app.slicer import samples
from app.slicer.errors import MetricsError
from app.slicer.mesh_io import write_stl
from app.slicer.metrics import (
    chamfer,
    comparison_region,
    cross_section_profiles,
    grid_points,
    reconstruct_deposited_surface,
    sample_mesh_surface,
)
from app.slicer.nonplanar_id import extract_nonplanar_surface
from app.slicer.types import PathKind, PathRole, PointSet, PointSetLabel, Toolpath


def _straight_path(start, end, layer: int = 0) -> Toolpath:
    positions = np.array([start, end], dtype=float)
    return Toolpath(
        role=PathRole.INFILL,
        kind=PathKind.PLANAR,
        layer=layer,
        positions=positions,
        orientations=np.tile([0.0, 0.0, 1.0], (2, 1)),
        extruding=np.array([False, True]),
    )


STRIP_REGION = (2.0, -0.95, 8.0, 0.95)
STRIP_GRID = (7, 20)


def test_chamfer_of_identical_sets_is_zero():
    points = np.random.default_rng(0).random((50, 3))

    assert chamfer(points, points) == 0.0


@pytest.mark.parametrize(
    "p,q,expected",
    [
        ([[0, 0, 0]], [[1, 0, 0]], 2.0),
        ([[0, 0, 0], [2, 0, 0]], [[1, 0, 0]], 2.0),
    ],
)
def test_chamfer_hand_values(p, q, expected):
    assert chamfer(np.array(p, dtype=float), np.array(q, dtype=float)) == pytest.approx(expected)


def test_chamfer_is_symmetric_and_rigid():
    rng = np.random.default_rng(1)
    p = PointSet(rng.random((200, 3)), PointSetLabel.SOURCE)
    q = PointSet(rng.random((150, 3)), PointSetLabel.PLANAR)
    angle = 0.7
    rotation = np.array([[np.cos(angle), -np.sin(angle), 0.0], [np.sin(angle), np.cos(angle), 0.0], [0.0, 0.0, 1.0]])
    shift = np.array([3.0, -2.0, 5.0])

    moved = chamfer(p.points @ rotation.T + shift, q.points @ rotation.T + shift)

    assert chamfer(p, q) == chamfer(q, p)
    assert moved == pytest.approx(chamfer(p, q), abs=1e-9)


def test_kdtree_matches_brute_force():
    rng = np.random.default_rng(2)
    p = rng.random((1000, 3))
    q = rng.random((1000, 3))

    assert chamfer(p, q, "kdtree") == pytest.approx(chamfer(p, q, "brute"), abs=1e-12)


def test_chamfer_rejects_empty_set():
    with pytest.raises(MetricsError, match="empty point set"):
        chamfer(np.zeros((0, 3)), np.zeros((1, 3)))


def test_chamfer_rejects_unknown_method():
    with pytest.raises(ValueError):
        chamfer(np.zeros((1, 3)), np.zeros((1, 3)), "octree")


def test_grid_points_index_x_first():
    xy, index = grid_points((0.0, 0.0, 2.0, 1.0), (3, 2))

    assert index.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1], [2, 0], [2, 1]]
    assert xy.tolist() == [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [2.0, 0.0], [2.0, 1.0]]


def test_grid_resolution_must_be_positive():
    with pytest.raises(ValueError):
        grid_points((0.0, 0.0, 1.0, 1.0), (0, 4))


def test_flat_plate_samples():
    plate = samples.height_field_solid(np.array([0.0, 10.0]), np.array([0.0, 10.0]), lambda x, y: np.full_like(x, 3.0))

    points = sample_mesh_surface(plate, (1.0, 1.0, 9.0, 9.0), (10, 10))

    assert len(points) == 100
    assert np.allclose(points.points[:, 2], 3.0)
    assert points.label == PointSetLabel.SOURCE


def test_dome_apex_sample_and_misses(hemisphere_mesh):
    points = sample_mesh_surface(hemisphere_mesh, (-30.0, -30.0, 30.0, 30.0), (3, 3))

    assert len(points) == 1
    assert points.points[0].tolist() == pytest.approx([0.0, 0.0, 20.0])
    assert points.grid_index.tolist() == [[1, 1]]


def test_region_off_the_mesh_has_no_hits(cube_mesh):
    with pytest.raises(MetricsError, match="no grid ray hits the mesh"):
        sample_mesh_surface(cube_mesh, (50.0, 50.0, 60.0, 60.0), (4, 4))


def test_single_bead_is_a_strip(config):
    surface = reconstruct_deposited_surface([_straight_path((0, 0, 0.15), (10, 0, 0.15))], config, STRIP_REGION, STRIP_GRID)

    assert len(surface) == 7 * 4
    assert np.allclose(surface.points[:, 2], 0.3)
    assert np.abs(surface.points[:, 1]).max() == pytest.approx(0.15)


def test_adjacent_beads_abut(config):
    paths = [_straight_path((0, 0, 0.15), (10, 0, 0.15)), _straight_path((0, 0.4, 0.15), (10, 0.4, 0.15))]

    surface = reconstruct_deposited_surface(paths, config, STRIP_REGION, STRIP_GRID)

    rows = np.unique(surface.grid_index[:, 1])
    assert len(surface) == 7 * 8
    assert (np.diff(rows) == 1).all()
    assert np.allclose(surface.points[:, 2], 0.3)


def test_more_paths_never_lower_the_surface(config):
    low = [_straight_path((0, 0, 0.15), (10, 0, 0.15))]
    high = low + [_straight_path((0, 0.1, 0.45), (10, 0.1, 0.45), layer=1)]

    first = reconstruct_deposited_surface(low, config, STRIP_REGION, STRIP_GRID)
    second = reconstruct_deposited_surface(high, config, STRIP_REGION, STRIP_GRID)

    before = {tuple(i): z for i, z in zip(first.grid_index.tolist(), first.points[:, 2])}
    after = {tuple(i): z for i, z in zip(second.grid_index.tolist(), second.points[:, 2])}
    assert set(before) <= set(after)
    assert all(after[key] >= value for key, value in before.items())
    assert max(after.values()) == pytest.approx(0.6)


def test_staircase_heights_are_layer_tops(config):
    paths = [_straight_path((0, 0, 0.15 + 0.3 * k), (10 - 2 * k, 0, 0.15 + 0.3 * k), layer=k) for k in range(3)]

    surface = reconstruct_deposited_surface(paths, config, (0.5, -0.05, 9.5, 0.05), (19, 2))

    assert set(np.round(surface.points[:, 2], 9)) == {0.3, 0.6, 0.9}


def test_travel_only_paths_cannot_be_reconstructed(config):
    travel = Toolpath(
        role=PathRole.INFILL,
        kind=PathKind.NONPLANAR,
        layer=0,
        positions=np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]]),
        orientations=np.tile([0.0, 0.0, 1.0], (2, 1)),
        extruding=np.array([False, False]),
    )

    with pytest.raises(MetricsError):
        reconstruct_deposited_surface([travel], config, STRIP_REGION, STRIP_GRID)


def test_comparison_region_spans_patches(cube_mesh, config):
    patches = extract_nonplanar_surface(cube_mesh, config)

    assert comparison_region(patches) == (0.0, 0.0, 20.0, 20.0)
    assert comparison_region([]) is None


def test_flat_top_box_is_reproduced_by_both_pipelines(tmp_path):
    stl = write_stl(samples.cube(6.0), tmp_path / "cube.stl")
    job = JobConfig(input_path=stl, output_dir=tmp_path / "out", report=True, metrics_grid=(120, 120))

    summary = SlicingService(workers=2).run(job)

    assert summary.report.patches == 1
    assert summary.report.cd_planar_mm <= 0.01
    assert summary.report.cd_nonplanar_mm <= 0.01


def test_cross_section_profiles_take_centre_lines():
    xy, index = grid_points((0.0, 0.0, 2.0, 2.0), (3, 3))
    points = PointSet(np.column_stack([xy, xy[:, 0] + 10.0 * xy[:, 1]]), PointSetLabel.SOURCE, index)

    profiles = cross_section_profiles({PointSetLabel.SOURCE: points}, (3, 3))

    assert profiles["source"]["plane_x"] == [[0.0, 1.0], [1.0, 11.0], [2.0, 21.0]]
    assert profiles["source"]["plane_y"] == [[0.0, 10.0], [1.0, 11.0], [2.0, 12.0]]
