from __future__ import annotations

from pathlib import Path
import logging
import threading
import uuid

from app.config import settings
from app.constants import LOGGER_NAME
from app.models import JobConfig, SlicerConfig
from app.services.job_service import JobService
from app.services.slicing_service import SlicingService
from app.services.export_service import TOOLPATH_FILE
from app.slicer.errors import SlicerError


logger = logging.getLogger(LOGGER_NAME)


class BackgroundSlicingService:
    """Runs API-submitted slicing jobs on daemon threads and tracks them in the job registry."""

    def __init__(
        self,
        slicing_service: SlicingService | None = None,
        job_service: JobService | None = None,
    ):
        self.slicing_service = slicing_service or SlicingService()
        self.job_service = job_service or JobService()
        self.work_dir = settings.APP_WORK_DIR
        self.work_dir.mkdir(parents=True, exist_ok=True)
        self.output_root = settings.APP_OUTPUT_DIR
        self._semaphore = threading.Semaphore(max(1, settings.APP_BACKGROUND_JOB_CONCURRENCY))
        self._lock = threading.Lock()
        self._running_jobs: set[str] = set()
        self.job_service.mark_stale_jobs_failed()

    def submit(
        self,
        stl_bytes: bytes,
        slicer_config: SlicerConfig,
        *,
        report: bool = False,
        export_svg: bool = False,
        export_obj: bool = False,
        force_planar: bool = False,
        metrics_grid: tuple[int, int] | None = None,
    ) -> dict:
        if not stl_bytes:
            raise ValueError("Request body must contain an STL file")
        if len(stl_bytes) > settings.max_upload_bytes:
            raise ValueError(f"STL upload exceeds the {settings.APP_MAX_UPLOAD_MB} MB limit")

        job_id = uuid.uuid4().hex
        input_path = self.work_dir / f"{job_id}.stl"
        input_path.write_bytes(stl_bytes)
        job = JobConfig(
            slicer=slicer_config,
            input_path=input_path,
            output_dir=self.output_root / job_id,
            export_svg=export_svg,
            export_obj=export_obj,
            report=report,
            force_planar=force_planar,
            metrics_grid=metrics_grid or settings.metrics_grid,
        )

        data = self.job_service.create_job(
            job_id=job_id,
            input_path=job.input_path,
            output_dir=job.output_dir,
            job_config=job.model_dump(mode="json"),
        )
        logger.info("[%s] Slicing job created (%d bytes of STL)", job_id, len(stl_bytes))
        self._ensure_job_started(job_id)
        return data

    def get_job_status(self, job_id: str) -> dict | None:
        return self.job_service.get_job(job_id)

    def get_toolpath_path(self, job_id: str) -> Path | None:
        job = self.job_service.get_job(job_id)
        if not job or job.get("status") != "completed":
            return None
        path = Path(job["output_dir"]) / TOOLPATH_FILE
        return path if path.exists() else None

    def _ensure_job_started(self, job_id: str) -> None:
        with self._lock:
            if job_id in self._running_jobs:
                logger.info("[%s] Worker already running", job_id)
                return
            self._running_jobs.add(job_id)

        worker = threading.Thread(
            target=self._run_job,
            args=(job_id,),
            daemon=True,
        )
        worker.start()

    def _run_job(self, job_id: str) -> None:
        try:
            with self._semaphore:
                logger.info("[%s] Background worker acquired execution slot", job_id)
                self._process_job(job_id)
        except SlicerError as e:
            logger.warning("[%s] Slicing failed: %s", job_id, e)
            self.job_service.mark_failed(job_id, str(e))
        except Exception as e:
            logger.exception("[%s] Background worker crashed: %s", job_id, str(e))
            self.job_service.mark_failed(job_id, str(e))
        finally:
            with self._lock:
                self._running_jobs.discard(job_id)
            (self.work_dir / f"{job_id}.stl").unlink(missing_ok=True)
            logger.info("[%s] Background worker finished", job_id)

    def _process_job(self, job_id: str) -> None:
        data = self.job_service.get_job(job_id)
        if data is None:
            raise ValueError(f"Slicing job {job_id} not found")
        job = JobConfig.model_validate(data["config"])

        def progress(step: str, percent: int, message: str) -> None:
            self.job_service.record_step(job_id, step, percent, message)

        summary = self.slicing_service.run(job, progress=progress)
        self.job_service.mark_completed(job_id, summary.model_dump(mode="json"))
