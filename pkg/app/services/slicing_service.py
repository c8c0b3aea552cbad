from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable
import logging

from app.config import settings
from app.constants import LOGGER_NAME
from app.models import JobConfig, SliceReport, SliceSummary, SlicerConfig
from app.services.export_service import (
    OBJ_FILE,
    PROFILES_FILE,
    TOOLPATH_FILE,
    ExportService,
)
from app.slicer.diagnostics import Diagnostics
from app.slicer.mesh_io import load_stl
from app.slicer.metrics import accuracy_point_sets, accuracy_report, comparison_region, cross_section_profiles
from app.slicer.nonplanar_id import extract_nonplanar_surface
from app.slicer.path2d import fill_layer, layer_toolpaths
from app.slicer.planar_slice import generate_layers
from app.slicer.projection import NonplanarLayer, generate_nonplanar_layers
from app.slicer.surface_offset import PatchStack, build_patch_stack
from app.slicer.types import Layer, PathKind, SurfacePatch, Toolpath, TriangleMesh


logger = logging.getLogger(LOGGER_NAME)

ProgressCallback = Callable[[str, int, str], None]


@dataclass(frozen=True, eq=False)
class SliceResult:
    """Everything the pipeline produced for one mesh, in print order."""

    mesh: TriangleMesh
    config: SlicerConfig
    patches: list[SurfacePatch]
    stacks: list[PatchStack]
    layers: list[Layer]
    nonplanar_layers: list[NonplanarLayer]
    toolpaths: list[Toolpath]
    warnings: list[str] = field(default_factory=list)

    @property
    def planar_toolpaths(self) -> list[Toolpath]:
        return [path for path in self.toolpaths if path.kind == PathKind.PLANAR]

    @property
    def nonplanar_toolpaths(self) -> list[Toolpath]:
        return [path for path in self.toolpaths if path.kind == PathKind.NONPLANAR]


class SlicingService:
    """Runs the slicing pipeline: load, detect, offset, subtract, slice, fill, project, export, report."""

    def __init__(self, export_service: ExportService | None = None, workers: int | None = None):
        self.export_service = export_service or ExportService()
        self.workers = max(1, workers or settings.APP_SLICER_WORKERS)

    def slice_mesh(
        self,
        mesh: TriangleMesh,
        config: SlicerConfig,
        *,
        force_planar: bool = False,
        progress: ProgressCallback | None = None,
    ) -> SliceResult:
        diagnostics = Diagnostics()
        report = progress or (lambda step, percent, message: None)

        patches: list[SurfacePatch] = []
        stacks: list[PatchStack] = []
        if not force_planar:
            report("detecting_surfaces", 10, "Identifying non-planar surfaces")
            patches = extract_nonplanar_surface(mesh, config, diagnostics=diagnostics)
            report("offsetting_surfaces", 20, f"Offsetting {len(patches)} non-planar patches")
            for patch in patches:
                stack = build_patch_stack(patch, config, diagnostics=diagnostics)
                if stack is not None:
                    stacks.append(stack)

        report("slicing_layers", 35, "Slicing the planar-only body")
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            sections = generate_layers(
                mesh,
                [stack.space for stack in stacks],
                config,
                diagnostics=diagnostics,
                executor=executor,
            )
            report("generating_paths", 55, f"Generating walls and infill for {len(sections)} layers")
            layers = list(executor.map(lambda layer: fill_layer(layer, config), sections))

        toolpaths: list[Toolpath] = []
        for layer in layers:
            toolpaths.extend(layer_toolpaths(layer, config))

        report("projecting_paths", 70, f"Projecting paths onto {len(stacks)} non-planar stacks")
        nonplanar_layers: list[NonplanarLayer] = []
        for stack in stacks:
            stack_layers = generate_nonplanar_layers(
                stack.patch,
                config,
                surfaces=stack.surfaces,
                first_layer_index=len(layers),
                diagnostics=diagnostics,
            )
            nonplanar_layers.extend(stack_layers)
            for layer in stack_layers:
                toolpaths.extend(layer.toolpaths)

        logger.info(
            "Sliced mesh: %d planar layers, %d non-planar layers over %d patches, %d toolpaths",
            len(layers),
            len(nonplanar_layers),
            len(stacks),
            len(toolpaths),
        )
        return SliceResult(
            mesh=mesh,
            config=config,
            patches=patches,
            stacks=stacks,
            layers=layers,
            nonplanar_layers=nonplanar_layers,
            toolpaths=toolpaths,
            warnings=diagnostics.warnings,
        )

    def run(self, job: JobConfig, progress: ProgressCallback | None = None) -> SliceSummary:
        """
        Slice one STL file and write the requested artifacts.

        The output directory is checked first and nothing is written until the whole
        pipeline (including the optional accuracy report) has succeeded.
        """
        report = progress or (lambda step, percent, message: None)
        output_dir = Path(job.output_dir)
        self.export_service.check_output_dir(output_dir)

        report("loading_mesh", 5, f"Loading {Path(job.input_path).name}")
        mesh = load_stl(job.input_path, weld_tolerance=job.slicer.weld_tolerance)
        result = self.slice_mesh(mesh, job.slicer, force_planar=job.force_planar, progress=progress)
        warnings = list(result.warnings)

        region = comparison_region(stack.patch for stack in result.stacks)
        cd_planar = cd_nonplanar = None
        profiles = None
        if job.report:
            report("computing_metrics", 85, "Computing Chamfer distances")
            if region is None:
                low, high = mesh.bounds
                region = (float(low[0]), float(low[1]), float(high[0]), float(high[1]))
                warnings.append("no non-planar patches; accuracy compared over the whole mesh footprint")
                logger.warning(warnings[-1])
            baseline = result if job.force_planar else self.slice_mesh(mesh, job.slicer, force_planar=True)
            point_sets = accuracy_point_sets(mesh, baseline.toolpaths, result.toolpaths, job.slicer, region, job.metrics_grid)
            cd_planar, cd_nonplanar = accuracy_report(
                mesh,
                baseline.toolpaths,
                result.toolpaths,
                job.slicer,
                region,
                job.metrics_grid,
                point_sets=point_sets,
            )
            profiles = cross_section_profiles(point_sets, job.metrics_grid)

        summary = SliceSummary(
            input_path=str(job.input_path),
            output_dir=str(output_dir),
            triangles=mesh.triangle_count,
            vertices=mesh.vertex_count,
            dropped_triangles=mesh.dropped_triangles,
            toolpaths=len(result.toolpaths),
            comparison_region=region,
            report=SliceReport(
                cd_planar_mm=cd_planar,
                cd_nonplanar_mm=cd_nonplanar,
                patches=len(result.stacks),
                planar_layers=len(result.layers),
                nonplanar_layers=len(result.nonplanar_layers),
                warnings=warnings,
            ),
        )

        report("writing_outputs", 95, f"Writing artifacts to {output_dir}")
        artifacts: list[Path] = []
        if job.export_toolpath_json:
            artifacts.append(self.export_service.write_toolpath_json(output_dir / TOOLPATH_FILE, result.toolpaths, job.slicer))
        if job.export_svg:
            low, high = mesh.bounds
            artifacts.extend(
                self.export_service.write_layer_svgs(
                    output_dir,
                    result.layers,
                    (float(low[0]), float(low[1]), float(high[0]), float(high[1])),
                )
            )
        if job.export_obj:
            artifacts.append(self.export_service.write_paths_obj(output_dir / OBJ_FILE, result.toolpaths))
        if profiles is not None:
            artifacts.append(self.export_service.write_profiles(output_dir / PROFILES_FILE, profiles))

        summary.artifacts = sorted({path.name for path in artifacts} | {"report.txt", "report.json"})
        self.export_service.write_report(output_dir, summary)
        logger.info("[%s] Slicing finished: %d artifacts", Path(job.input_path).name, len(summary.artifacts))
        return summary
