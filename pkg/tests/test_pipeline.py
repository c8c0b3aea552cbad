import json

import numpy as np
import pytest

from app import cli
from app.models import JobConfig, SliceReport, SliceSummary, SlicerConfig
from app.services.export_service import ExportService, toolpath_record
from app.services.slicing_service import SlicingService
from app.slicer import samples
from app.slicer.errors import MeshFormatError, OutputError
from app.slicer.mesh_io import write_stl
from app.slicer.planar_slice import chains_to_geometry, section_geometry
from app.slicer.types import Layer, PathKind, PathRole, PolygonChain, Toolpath
from app.utils.report_utils import format_report_text, format_summary_line


@pytest.fixture(scope="module")
def hemisphere_result():
    return SlicingService(workers=2).slice_mesh(samples.hemisphere(20.0, 48), SlicerConfig())


@pytest.fixture
def cube_stl(tmp_path):
    return write_stl(samples.cube(6.0), tmp_path / "cube.stl")


@pytest.fixture
def quiet_cli(monkeypatch):
    monkeypatch.setattr(cli, "configure_logging", lambda level=None: None)


def _blocked_dir(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    return blocker / "out"


def test_hemisphere_gets_planar_body_and_nonplanar_cap(hemisphere_result):
    result = hemisphere_result

    assert len(result.stacks) == 1
    assert len(result.nonplanar_layers) == 2
    assert result.planar_toolpaths
    assert result.nonplanar_toolpaths
    assert all(path.layer < len(result.layers) for path in result.planar_toolpaths)
    assert {path.layer for path in result.nonplanar_toolpaths} == {len(result.layers), len(result.layers) + 1}
    assert all(path.patch == result.stacks[0].patch.patch_id for path in result.nonplanar_toolpaths)


def test_planar_paths_print_first(hemisphere_result):
    kinds = [path.kind for path in hemisphere_result.toolpaths]
    first_nonplanar = kinds.index(PathKind.NONPLANAR)

    assert all(kind == PathKind.NONPLANAR for kind in kinds[first_nonplanar:])


def test_force_planar_skips_detection():
    result = SlicingService(workers=1).slice_mesh(samples.hemisphere(20.0, 48), SlicerConfig(), force_planar=True)

    assert result.patches == []
    assert result.nonplanar_toolpaths == []
    assert len(result.layers) == 66


def test_toolpaths_are_deterministic_across_worker_counts(tmp_path):
    mesh = samples.dome_on_plate()
    export = ExportService()
    serial = SlicingService(workers=1).slice_mesh(mesh, SlicerConfig())
    parallel = SlicingService(workers=3).slice_mesh(mesh, SlicerConfig())

    first = export.write_toolpath_json(tmp_path / "serial.json", serial.toolpaths, serial.config)
    second = export.write_toolpath_json(tmp_path / "parallel.json", parallel.toolpaths, parallel.config)

    assert first.read_bytes() == second.read_bytes()
    assert serial.warnings == parallel.warnings


def test_progress_steps_are_reported_in_order():
    steps = []

    SlicingService(workers=1).slice_mesh(samples.cube(3.0), SlicerConfig(), progress=lambda step, percent, message: steps.append((step, percent)))

    assert [step for step, _ in steps] == [
        "detecting_surfaces",
        "offsetting_surfaces",
        "slicing_layers",
        "generating_paths",
        "projecting_paths",
    ]
    assert [percent for _, percent in steps] == sorted(percent for _, percent in steps)


def test_run_writes_requested_artifacts(cube_stl, tmp_path):
    output = tmp_path / "out"
    job = JobConfig(input_path=cube_stl, output_dir=output, export_svg=True, export_obj=True, report=True, metrics_grid=(20, 20))

    summary = SlicingService(workers=2).run(job)

    for name in ("toolpath.json", "paths.obj", "profiles.json", "report.txt", "report.json", "layer_0000.svg"):
        assert name in summary.artifacts
        assert (output / name).exists()
    report = json.loads((output / "report.json").read_text())
    assert report["patches"] == 1
    assert report["cd_planar_mm"] >= 0
    assert report["cd_nonplanar_mm"] >= 0
    assert summary.comparison_region == pytest.approx((0.0, 0.0, 6.0, 6.0))
    toolpath = json.loads((output / "toolpath.json").read_text())
    assert toolpath["config"]["layer_height"] == 0.3
    assert len(toolpath["paths"]) == summary.toolpaths
    profiles = json.loads((output / "profiles.json").read_text())
    assert set(profiles) == {"source", "planar-reconstruction", "nonplanar-reconstruction"}


def test_run_without_patches_compares_the_footprint(cube_stl, tmp_path):
    job = JobConfig(input_path=cube_stl, output_dir=tmp_path / "out", force_planar=True, report=True, metrics_grid=(12, 12))

    summary = SlicingService(workers=1).run(job)

    assert summary.report.patches == 0
    assert summary.comparison_region == pytest.approx((0.0, 0.0, 6.0, 6.0))
    assert summary.report.cd_planar_mm == summary.report.cd_nonplanar_mm
    assert any("whole mesh footprint" in warning for warning in summary.report.warnings)


def test_nonplanar_layers_beat_planar_on_freeform_dome(tmp_path):
    stl = write_stl(samples.freeform_dome(), tmp_path / "dome.stl")
    job = JobConfig(input_path=stl, output_dir=tmp_path / "out", report=True, metrics_grid=(350, 356))

    summary = SlicingService(workers=2).run(job)

    assert summary.report.patches == 1
    assert summary.report.cd_nonplanar_mm <= 0.05
    assert summary.report.cd_planar_mm >= 4.0 * summary.report.cd_nonplanar_mm


@pytest.mark.parametrize("build", [samples.dome_on_plate, samples.two_dome_plate], ids=["one-dome", "two-domes"])
def test_planar_layers_stay_out_of_the_nonplanar_space(build):
    mesh = build()
    result = SlicingService(workers=2).slice_mesh(mesh, SlicerConfig())
    half = result.config.layer_height / 2.0

    assert result.stacks
    assert all(stack.space.is_watertight for stack in result.stacks)
    for layer in result.layers:
        if layer.is_empty:
            continue
        printed = chains_to_geometry(list(layer.chains))
        for stack in result.stacks:
            reserved = section_geometry(stack.space, layer.z - half)
            assert printed.intersection(reserved).area < 1e-6


@pytest.mark.parametrize("force_planar", [False, True], ids=["nonplanar", "planar-only"])
@pytest.mark.parametrize("build", [samples.freeform_dome, samples.mouse_shell, samples.two_dome_plate], ids=["freeform-dome", "mouse-shell", "two-domes"])
def test_bundled_meshes_give_identical_toolpath_files(build, force_planar, tmp_path):
    mesh = build()
    export = ExportService()

    runs = [SlicingService(workers=workers).slice_mesh(mesh, SlicerConfig(), force_planar=force_planar) for workers in (1, 2)]
    files = [
        export.write_toolpath_json(tmp_path / f"run{number}.json", run.toolpaths, run.config)
        for number, run in enumerate(runs)
    ]

    assert files[0].read_bytes() == files[1].read_bytes()
    if force_planar:
        assert not any(path.kind == PathKind.NONPLANAR for path in runs[0].toolpaths)


def test_unwritable_output_fails_before_any_work(cube_stl, tmp_path):
    job = JobConfig(input_path=cube_stl, output_dir=_blocked_dir(tmp_path))

    with pytest.raises(OutputError):
        SlicingService(workers=1).run(job)

    assert sorted(path.name for path in tmp_path.iterdir()) == ["blocker", "cube.stl"]


def test_missing_input_is_a_mesh_error(tmp_path):
    job = JobConfig(input_path=tmp_path / "missing.stl", output_dir=tmp_path / "out")

    with pytest.raises(MeshFormatError):
        SlicingService(workers=1).run(job)
    assert not (tmp_path / "out" / "toolpath.json").exists()


def test_empty_toolpath_list_exports_empty_paths(tmp_path):
    path = ExportService().write_toolpath_json(tmp_path / "toolpath.json", [])

    assert json.loads(path.read_text()) == {"paths": []}


def test_toolpath_record_fields():
    toolpath = Toolpath(
        role=PathRole.OUTER_WALL,
        kind=PathKind.PLANAR,
        layer=3,
        positions=np.array([[0.0, 0.0, 0.15], [1.0, 0.0, 0.15]]),
        orientations=np.tile([0.0, 0.0, 1.0], (2, 1)),
        extruding=np.array([False, True]),
    )

    record = toolpath_record(toolpath)

    assert record["layer"] == 3
    assert record["patch"] is None
    assert record["points"][0] == {"x": 0.0, "y": 0.0, "z": 0.15, "nx": 0.0, "ny": 0.0, "nz": 1.0, "e": False}
    assert record["points"][1]["e"] is True


def test_obj_splits_runs_at_travel_moves(tmp_path):
    toolpath = Toolpath(
        role=PathRole.INFILL,
        kind=PathKind.NONPLANAR,
        layer=0,
        positions=np.arange(15, dtype=float).reshape(5, 3),
        orientations=np.tile([0.0, 0.0, 1.0], (5, 1)),
        extruding=np.array([False, True, True, False, True]),
    )

    text = ExportService().write_paths_obj(tmp_path / "paths.obj", [toolpath]).read_text()

    assert [line for line in text.splitlines() if line.startswith("l ")] == ["l 1 2 3", "l 4 5"]
    assert sum(line.startswith("v ") for line in text.splitlines()) == 5


def test_layer_svg_draws_holes_with_the_even_odd_rule(tmp_path):
    shell = PolygonChain(np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]]))
    hole = PolygonChain(np.array([[1.0, 1.0], [1.0, 3.0], [3.0, 3.0], [3.0, 1.0]]), is_hole=True, parent=0)
    layer = Layer(index=2, z=0.9, chains=(shell, hole))

    (path,) = ExportService().write_layer_svgs(tmp_path, [layer], (0.0, 0.0, 4.0, 4.0))

    outlines = [line for line in path.read_text().splitlines() if line.strip().startswith("<path")]
    assert path.name == "layer_0002.svg"
    assert len(outlines) == 1
    assert 'fill-rule="evenodd"' in outlines[0]
    assert outlines[0].count("M ") == 2


def test_output_check_rejects_a_file_path(tmp_path):
    with pytest.raises(OutputError, match="output directory not writable"):
        ExportService().check_output_dir(_blocked_dir(tmp_path))


def test_report_text_without_metrics():
    summary = SliceSummary(input_path="part.stl", output_dir="out", triangles=12, vertices=8, report=SliceReport(warnings=["w"]))

    text = format_report_text(summary)

    assert "chamfer distance, planar: n/a" in text
    assert "ratio" not in text
    assert text.endswith("  - w\n")
    assert format_summary_line(summary).endswith("; 1 warnings")


def test_cli_slice_succeeds(quiet_cli, cube_stl, tmp_path, capsys):
    code = cli.main(["slice", str(cube_stl), "-o", str(tmp_path / "out"), "--walls", "1"])

    assert code == cli.EXIT_OK
    assert "toolpaths" in capsys.readouterr().out
    assert (tmp_path / "out" / "toolpath.json").exists()


def test_cli_rejects_invalid_parameters(quiet_cli, cube_stl, tmp_path):
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["slice", str(cube_stl), "-o", str(tmp_path / "out"), "--layer-height", "-0.3"])

    assert excinfo.value.code == cli.EXIT_USAGE


def test_cli_reports_missing_mesh(quiet_cli, tmp_path):
    assert cli.main(["slice", str(tmp_path / "missing.stl"), "-o", str(tmp_path / "out")]) == cli.EXIT_MESH


def test_cli_reports_unwritable_output(quiet_cli, cube_stl, tmp_path):
    assert cli.main(["slice", str(cube_stl), "-o", str(_blocked_dir(tmp_path))]) == cli.EXIT_OUTPUT


def test_cli_writes_samples(quiet_cli, tmp_path, capsys):
    assert cli.main(["samples", "-o", str(tmp_path / "samples")]) == cli.EXIT_OK
    assert "cube.stl" in capsys.readouterr().out
