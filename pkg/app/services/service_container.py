from dataclasses import dataclass
from functools import lru_cache


from app.services.background_slicing_service import BackgroundSlicingService
from app.services.export_service import ExportService
from app.services.job_service import JobService
from app.services.slicing_service import SlicingService


@dataclass(frozen=True)
class ServiceContainer:
    export_service: ExportService
    slicing_service: SlicingService
    job_service: JobService
    background_slicing_service: BackgroundSlicingService


@lru_cache(maxsize=1)
def get_service_container() -> ServiceContainer:
    export_service = ExportService()
    slicing_service = SlicingService(export_service=export_service)
    job_service = JobService()
    background_slicing_service = BackgroundSlicingService(
        slicing_service=slicing_service,
        job_service=job_service,
    )
    return ServiceContainer(
        export_service=export_service,
        slicing_service=slicing_service,
        job_service=job_service,
        background_slicing_service=background_slicing_service,
    )
