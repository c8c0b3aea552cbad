from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.slicer.nonplanar_id import threshold_angle


class ExtruderBox(BaseModel):
    """Axis-aligned extruder bounding box, nozzle tip at the bottom centre."""
    model_config = ConfigDict(frozen=True)

    width: float = Field(default=1.0, ge=0, description="Box size along x in mm")
    depth: float = Field(default=1.0, ge=0, description="Box size along y in mm")
    height: float = Field(default=10.0, ge=0, description="Box size along z in mm")

    @property
    def is_empty(self) -> bool:
        return min(self.width, self.depth, self.height) <= 0


class SlicerConfig(BaseModel):
    """Slicing parameters shared by every stage of the pipeline."""
    model_config = ConfigDict(frozen=True)

    layer_height: float = Field(default=0.3, gt=0, description="Layer height in mm")
    extrusion_width: float = Field(default=0.4, gt=0, description="Extrusion width in mm")
    threshold_angle_deg: float = Field(
        default=None,
        gt=0,
        le=90,
        description="Maximum surface inclination printed non-planar; defaults to atan(layer_height / extrusion_width)",
    )
    wall_count: int = Field(default=2, ge=1, description="Number of perimeter walls")
    nonplanar_layer_count: int = Field(default=2, ge=1, description="Number of stacked non-planar layers per patch")
    infill_spacing: float = Field(default=None, gt=0, description="Distance between infill passes; defaults to extrusion width")
    infill_base_angle_deg: float = Field(default=0.0, description="Infill direction of even layers in degrees")
    extruder_box: ExtruderBox = Field(default_factory=ExtruderBox, description="Extruder collision envelope")
    occlusion_check: bool = Field(default=True, description="Reject non-planar vertices with material above them")
    collision_check: bool = Field(default=True, description="Reject non-planar vertices the extruder box cannot reach")
    weld_tolerance: float = Field(default=1e-6, ge=0, description="Vertex welding distance in mm")

    @model_validator(mode="before")
    @classmethod
    def _resolve_derived_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        layer_height = data.get("layer_height", 0.3)
        extrusion_width = data.get("extrusion_width", 0.4)
        if data.get("threshold_angle_deg") is None:
            try:
                data["threshold_angle_deg"] = threshold_angle(float(layer_height), float(extrusion_width))
            except (TypeError, ValueError):
                # leave the field unset so the field validators report the bad input
                data.pop("threshold_angle_deg", None)
        if data.get("infill_spacing") is None:
            data["infill_spacing"] = extrusion_width
        return data

    @model_validator(mode="after")
    def _check_spacing(self) -> "SlicerConfig":
        if self.infill_spacing < self.extrusion_width:
            raise ValueError("infill_spacing must be greater than or equal to extrusion_width")
        return self


class JobConfig(BaseModel):
    """One slicing run: the mesh, where the artifacts go, and what to emit."""
    slicer: SlicerConfig = Field(default_factory=SlicerConfig, description="Slicing parameters")
    input_path: Path = Field(..., description="Input STL file")
    output_dir: Path = Field(..., description="Directory receiving the artifacts")
    export_toolpath_json: bool = Field(default=True, description="Write toolpath.json")
    export_svg: bool = Field(default=False, description="Write one layer_####.svg per planar layer")
    export_obj: bool = Field(default=False, description="Write paths.obj polylines")
    report: bool = Field(default=False, description="Compute Chamfer distances and write profiles.json")
    force_planar: bool = Field(default=False, description="Skip non-planar detection entirely")
    metrics_grid: tuple[int, int] = Field(default=(350, 356), description="Metrics sampling grid (nx, ny)")
    seed: int | None = Field(default=None, description="Reserved; the pipeline is deterministic")


class SliceReport(BaseModel):
    """Summary written to report.json."""
    cd_planar_mm: float | None = Field(default=None, description="Chamfer distance of the planar-only baseline")
    cd_nonplanar_mm: float | None = Field(default=None, description="Chamfer distance of the combined toolpaths")
    patches: int = Field(default=0, ge=0, description="Number of non-planar patches")
    planar_layers: int = Field(default=0, ge=0, description="Number of planar layers")
    nonplanar_layers: int = Field(default=0, ge=0, description="Number of non-planar layers across all patches")
    warnings: list[str] = Field(default_factory=list, description="Pipeline warnings in occurrence order")


class SliceSummary(BaseModel):
    """Extended run summary used by report.txt, the API and MCP tools."""
    input_path: str = Field(..., description="Input STL file")
    output_dir: str = Field(..., description="Artifact directory")
    triangles: int = Field(..., ge=0, description="Triangles after welding")
    vertices: int = Field(..., ge=0, description="Vertices after welding")
    dropped_triangles: int = Field(default=0, ge=0, description="Degenerate triangles removed while welding")
    toolpaths: int = Field(default=0, ge=0, description="Number of emitted toolpaths")
    comparison_region: tuple[float, float, float, float] | None = Field(
        default=None, description="xy bounding box used for the accuracy comparison"
    )
    artifacts: list[str] = Field(default_factory=list, description="Written artifact file names")
    report: SliceReport = Field(default_factory=SliceReport, description="Machine-readable report")


class HealthResponse(BaseModel):
    """Health check response."""
    status: str = Field(..., description="Service status")
    version: str = Field(..., description="Service version")
    uptime_seconds: float = Field(..., ge=0, description="Application uptime in seconds")
    output_path: str = Field(..., description="Artifact directory path")
    output_accessible: bool = Field(..., description="Whether the artifact directory is accessible")
    active_jobs: int = Field(..., ge=0, description="Number of queued or running slicing jobs")


class SlicingJobResponse(BaseModel):
    """Status of a background slicing job."""
    job_id: str = Field(..., min_length=1, description="Slicing job identifier")
    status: str = Field(..., description="Job status")
    current_step: str = Field(default="queued", description="Current pipeline step")
    progress_percent: int = Field(default=0, ge=0, le=100, description="Job progress")
    message: str = Field(default="", description="Human-readable status")
    error: str | None = Field(default=None, description="Failure reason")
    created_at: str | None = Field(default=None, description="ISO timestamp of submission")
    updated_at: str | None = Field(default=None, description="ISO timestamp of the last update")
    result: SliceSummary | None = Field(default=None, description="Run summary once completed")


