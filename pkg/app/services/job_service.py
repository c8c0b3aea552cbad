from __future__ import annotations

from datetime import datetime, timedelta
from pathlib import Path
import json
import os
import re
import tempfile
import threading
import uuid

from app.config import settings


# pipeline steps in the order SlicingService.run reports them
SLICING_STEPS = (
    "loading_mesh",
    "detecting_surfaces",
    "offsetting_surfaces",
    "slicing_layers",
    "generating_paths",
    "projecting_paths",
    "computing_metrics",
    "writing_outputs",
)
ACTIVE_JOB_STATES = {"queued", *SLICING_STEPS}

_JOB_ID_PATTERN = re.compile(r"^[0-9a-f]{32}$")


class JobService:
    """
    Slicing job records, one JSON file per job under ``APP_JOBS_DIR``.

    A record holds the uploaded STL path, the output directory, the frozen JobConfig
    and the step the pipeline last reported. Completed records carry the SliceSummary.
    """

    def __init__(self, jobs_dir: Path | None = None):
        self.jobs_dir = jobs_dir or settings.APP_JOBS_DIR
        self.jobs_dir.mkdir(parents=True, exist_ok=True)
        self._registry_lock = threading.Lock()
        self._record_locks: dict[str, threading.Lock] = {}

    @staticmethod
    def validate_job_id(job_id: str) -> str:
        normalized = (job_id or "").strip().lower()
        if not _JOB_ID_PATTERN.match(normalized):
            raise ValueError(f"Invalid slicing job id: {job_id!r}")
        return normalized

    def _record_path(self, job_id: str) -> Path:
        return self.jobs_dir / f"{job_id}.json"

    def _record_lock(self, job_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._record_locks.setdefault(job_id, threading.Lock())

    def _write_record(self, path: Path, record: dict) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile("w", encoding="utf-8", dir=path.parent, delete=False) as tmp_file:
            json.dump(record, tmp_file, ensure_ascii=False, indent=2)
            tmp_path = Path(tmp_file.name)
        os.replace(tmp_path, path)

    @staticmethod
    def _read_record(path: Path) -> dict | None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except (FileNotFoundError, json.JSONDecodeError, OSError):
            return None

    def get_job(self, job_id: str) -> dict | None:
        job_id = self.validate_job_id(job_id)
        with self._record_lock(job_id):
            return self._read_record(self._record_path(job_id))

    def count_active_jobs(self) -> int:
        """Jobs that are queued or somewhere inside the slicing pipeline."""
        records = (self._read_record(path) for path in self.jobs_dir.glob("*.json"))
        return sum(1 for record in records if record and record.get("status") in ACTIVE_JOB_STATES)

    def create_job(self, *, input_path: Path, output_dir: Path, job_config: dict, job_id: str | None = None) -> dict:
        job_id = self.validate_job_id(job_id) if job_id else uuid.uuid4().hex
        now = datetime.now().isoformat()
        record = {
            "job_id": job_id,
            "input_path": str(input_path),
            "output_dir": str(output_dir),
            "config": job_config,
            "status": "queued",
            "progress_percent": 0,
            "current_step": "queued",
            "message": f"Waiting to slice {Path(input_path).name}",
            "created_at": now,
            "updated_at": now,
            "error": None,
            "result": None,
        }
        with self._record_lock(job_id):
            self._write_record(self._record_path(job_id), record)
        return record

    def update_job(self, job_id: str, **updates) -> dict:
        with self._record_lock(job_id):
            record = self._read_record(self._record_path(job_id))
            if record is None:
                raise ValueError(f"Slicing job {job_id} not found")
            record.update(updates)
            record["updated_at"] = datetime.now().isoformat()
            self._write_record(self._record_path(job_id), record)
            return record

    def record_step(self, job_id: str, step: str, percent: int, message: str) -> dict:
        """Store the pipeline step a running job has reached."""
        if step not in SLICING_STEPS:
            raise ValueError(f"Unknown slicing step: {step!r}")
        return self.update_job(job_id, status=step, current_step=step, progress_percent=percent, message=message)

    def mark_completed(self, job_id: str, summary: dict) -> dict:
        return self.update_job(
            job_id,
            status="completed",
            current_step="completed",
            progress_percent=100,
            message=f"Sliced into {summary.get('toolpaths', 0)} toolpaths",
            result=summary,
        )

    def mark_failed(self, job_id: str, error: str) -> dict:
        return self.update_job(
            job_id,
            status="failed",
            current_step="failed",
            progress_percent=100,
            message="Slicing failed",
            error=error,
        )

    def mark_stale_jobs_failed(self) -> None:
        """
        Fail jobs a previous process left mid-pipeline and drop finished records
        older than APP_JOB_POLL_TTL_DAYS.
        """
        ttl = timedelta(days=settings.APP_JOB_POLL_TTL_DAYS)
        now = datetime.now()

        for path in self.jobs_dir.glob("*.json"):
            record = self._read_record(path)
            if record is None:
                continue

            if record.get("status") in ACTIVE_JOB_STATES:
                record.update(
                    status="failed",
                    current_step="failed",
                    message=f"Slicing stopped at {record.get('current_step')} when the server restarted",
                    error="interrupted",
                    updated_at=now.isoformat(),
                )
                self._write_record(path, record)
                continue

            try:
                updated_at = datetime.fromisoformat(record.get("updated_at") or record.get("created_at"))
            except (TypeError, ValueError):
                updated_at = now
            if now - updated_at > ttl:
                path.unlink(missing_ok=True)
