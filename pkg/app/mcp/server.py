from pathlib import Path

from fastmcp import FastMCP

from app.config import settings
from app.constants import SERVICE_NAME
from app.models import JobConfig
from app.services.service_container import get_service_container
from app.slicer.nonplanar_id import threshold_angle
from app.utils.config_utils import build_slicer_config
from app.utils.report_utils import format_millimetres, format_summary_line


def _format_job_status(job: dict) -> str:
    response = f"Status: {job.get('status', 'unknown')}\n" \
               f"Job ID: {job.get('job_id', 'N/A')}\n" \
               f"Step: {job.get('current_step', 'unknown')}\n" \
               f"Progress: {job.get('progress_percent', 0)}%\n" \
               f"Message: {job.get('message', '')}"

    if job.get("error"):
        response += f"\nError: {job.get('error')}"

    result = job.get("result")
    if result:
        report = result.get("report") or {}
        response += f"\n\nOutput: {result.get('output_dir')}\n" \
                    f"Toolpaths: {result.get('toolpaths', 0)}\n" \
                    f"Planar layers: {report.get('planar_layers', 0)}\n" \
                    f"Non-planar layers: {report.get('nonplanar_layers', 0)}\n" \
                    f"CD planar: {format_millimetres(report.get('cd_planar_mm'))}\n" \
                    f"CD non-planar: {format_millimetres(report.get('cd_nonplanar_mm'))}"
    return response


mcp = FastMCP(SERVICE_NAME)


@mcp.tool()
def slice_stl(
    path: str,
    output_dir: str | None = None,
    layer_height: float | None = None,
    extrusion_width: float | None = None,
    threshold_angle_deg: float | None = None,
    walls: int | None = None,
    nonplanar_layers: int | None = None,
    force_planar: bool = False,
    report: bool = False,
) -> str:
    """
    Slice an STL file that is readable by the server and write toolpath.json plus a report.

    Args:
        path: Path of the STL file on the server (required)
        output_dir: Artifact directory; defaults to <APP_OUTPUT_DIR>/<file stem>
        layer_height: Layer height in mm
        extrusion_width: Extrusion width in mm
        threshold_angle_deg: Maximum inclination printed non-planar, in degrees
        walls: Number of perimeter walls
        nonplanar_layers: Number of stacked non-planar layers per patch
        force_planar: Skip non-planar detection entirely
        report: Compute planar and non-planar Chamfer distances

    Returns:
        One-line run summary followed by the pipeline warnings
    """
    try:
        input_path = Path(path)
        job = JobConfig(
            slicer=build_slicer_config(
                layer_height=layer_height,
                extrusion_width=extrusion_width,
                threshold_angle_deg=threshold_angle_deg,
                wall_count=walls,
                nonplanar_layer_count=nonplanar_layers,
            ),
            input_path=input_path,
            output_dir=Path(output_dir) if output_dir else settings.APP_OUTPUT_DIR / input_path.stem,
            report=report,
            force_planar=force_planar,
            metrics_grid=settings.metrics_grid,
        )
        summary = get_service_container().slicing_service.run(job)
        lines = [format_summary_line(summary)]
        lines.extend(f"Warning: {warning}" for warning in summary.report.warnings)
        return "\n".join(lines)
    except Exception as e:
        return f"Error: {str(e)}"


@mcp.tool()
def get_slicing_job(job_id: str) -> str:
    """
    Check the status of a background slicing job submitted through the HTTP API.

    Args:
        job_id: Job identifier returned by POST /slicing/jobs (required)

    Returns:
        Job status, progress and, once completed, the run report
    """
    try:
        job = get_service_container().background_slicing_service.get_job_status(job_id)
        if not job:
            return f"Error: No slicing job found for id {job_id}"
        return _format_job_status(job)
    except Exception as e:
        return f"Error: {str(e)}"


@mcp.tool()
def compute_threshold_angle(layer_height: float, extrusion_width: float) -> str:
    """
    Inclination below which a non-planar layer reproduces a surface better than planar layers.

    Args:
        layer_height: Layer height in mm (required)
        extrusion_width: Extrusion width in mm (required)

    Returns:
        Threshold angle in degrees
    """
    try:
        angle = threshold_angle(layer_height, extrusion_width)
        return f"Threshold angle: {angle:.4f} degrees"
    except Exception as e:
        return f"Error: {str(e)}"
