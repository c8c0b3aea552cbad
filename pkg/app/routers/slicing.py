from fastapi import APIRouter, Depends, HTTPException, Query, Request, status
from fastapi.responses import FileResponse

from app.config import settings
from app.models import SlicingJobResponse
from app.rate_limiter import limiter
from app.services.export_service import TOOLPATH_FILE
from app.services.service_container import ServiceContainer, get_service_container
from app.utils.config_utils import build_slicer_config


router = APIRouter(
    prefix="/slicing/jobs",
    tags=["slicing"],
)


def _job_response(data: dict) -> SlicingJobResponse:
    return SlicingJobResponse.model_validate(data)


@router.post(
    "",
    response_model=SlicingJobResponse,
    status_code=status.HTTP_202_ACCEPTED,
    summary="Submit an STL mesh for slicing",
)
@limiter.limit(settings.APP_SLICE_RATE_LIMIT)
async def submit_slicing_job(
    request: Request,
    layer_height: float | None = Query(default=None, gt=0, description="Layer height in mm"),
    extrusion_width: float | None = Query(default=None, gt=0, description="Extrusion width in mm"),
    threshold_angle: float | None = Query(default=None, gt=0, le=90, description="Threshold angle in degrees"),
    walls: int | None = Query(default=None, ge=1, description="Number of perimeter walls"),
    nonplanar_layers: int | None = Query(default=None, ge=1, description="Non-planar layers per patch"),
    infill_spacing: float | None = Query(default=None, gt=0, description="Infill pass spacing in mm"),
    infill_angle: float | None = Query(default=None, description="Infill base angle in degrees"),
    force_planar: bool = Query(default=False, description="Skip non-planar detection"),
    report: bool = Query(default=False, description="Compute Chamfer distances"),
    svg: bool = Query(default=False, description="Write one SVG per planar layer"),
    obj: bool = Query(default=False, description="Write toolpath polylines as OBJ"),
    container: ServiceContainer = Depends(get_service_container),
):
    """Accept a raw STL request body and queue a background slicing job."""
    content_length = request.headers.get("content-length")
    if content_length and content_length.isdigit() and int(content_length) > settings.max_upload_bytes:
        raise HTTPException(
            status_code=status.HTTP_413_REQUEST_ENTITY_TOO_LARGE,
            detail=f"STL upload exceeds the {settings.APP_MAX_UPLOAD_MB} MB limit",
        )

    try:
        stl_bytes = await request.body()
        slicer_config = build_slicer_config(
            layer_height=layer_height,
            extrusion_width=extrusion_width,
            threshold_angle_deg=threshold_angle,
            wall_count=walls,
            nonplanar_layer_count=nonplanar_layers,
            infill_spacing=infill_spacing,
            infill_base_angle_deg=infill_angle,
        )
        data = container.background_slicing_service.submit(
            stl_bytes,
            slicer_config,
            report=report,
            export_svg=svg,
            export_obj=obj,
            force_planar=force_planar,
        )
        return _job_response(data)

    except ValueError as e:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=str(e)
        )
    except Exception as e:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Error submitting slicing job: {str(e)}"
        )


@router.get("/{job_id}", response_model=SlicingJobResponse, summary="Get slicing job status")
@limiter.limit("60/minute")
async def get_slicing_job(
    request: Request,
    job_id: str,
    container: ServiceContainer = Depends(get_service_container),
):
    del request
    try:
        data = container.background_slicing_service.get_job_status(job_id)
    except ValueError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))

    if data is None:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=f"Slicing job {job_id} not found"
        )
    return _job_response(data)


@router.get("/{job_id}/toolpath", summary="Download toolpath.json of a completed job")
@limiter.limit("30/minute")
async def get_slicing_toolpath(
    request: Request,
    job_id: str,
    container: ServiceContainer = Depends(get_service_container),
):
    del request
    try:
        data = container.background_slicing_service.get_job_status(job_id)
    except ValueError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))

    if data is None:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=f"Slicing job {job_id} not found"
        )

    path = container.background_slicing_service.get_toolpath_path(job_id)
    if path is None:
        raise HTTPException(
            status_code=status.HTTP_409_CONFLICT,
            detail=f"Slicing job {job_id} has no toolpath (status: {data.get('status')})"
        )
    return FileResponse(path, media_type="application/json", filename=TOOLPATH_FILE)
