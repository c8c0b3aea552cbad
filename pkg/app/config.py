import os
from pathlib import Path
from dotenv import dotenv_values
from pydantic_settings import BaseSettings, SettingsConfigDict

# Get app directory (where config.py is located)
APP_DIR = Path(__file__).parent
PROJECT_DIR = APP_DIR.parent


def _get_env_files() -> tuple[str, ...]:
    env_files: list[str] = []

    app_env = APP_DIR / ".env"
    project_env = PROJECT_DIR / ".env"

    if app_env.exists():
        env_files.append(str(app_env))

    if project_env.exists() and project_env != app_env:
        env_files.append(str(project_env))

    return tuple(env_files)


def _bootstrap_prefixed_environment() -> None:
    for key, value in list(os.environ.items()):
        if key.startswith("_APP_"):
            os.environ.setdefault(key[1:], value)

    for env_file in _get_env_files():
        for key, value in dotenv_values(env_file).items():
            if key and value is not None and key.startswith("_APP_"):
                os.environ.setdefault(key[1:], value)


_bootstrap_prefixed_environment()


def _parse_float_list(raw: str, expected: int, name: str) -> tuple[float, ...]:
    parts = [part.strip() for part in raw.split(",") if part.strip()]
    if len(parts) != expected:
        raise ValueError(f"{name} must contain {expected} comma separated numbers, got '{raw}'")
    return tuple(float(part) for part in parts)


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="",
        env_file=_get_env_files(),
        case_sensitive=False,
        extra="ignore"
    )

    # API Paths
    APP_ROOT_PATH: str = ""
    APP_API_PREFIX: str = "/api/v1"
    APP_CORS_ALLOW_ORIGINS: str = ""
    APP_CORS_ALLOW_CREDENTIALS: bool = False
    APP_CORS_ALLOW_METHODS: str = "GET,POST,OPTIONS"
    APP_CORS_ALLOW_HEADERS: str = "*"

    # Storage
    APP_OUTPUT_DIR: Path = Path("./data/output")
    APP_JOBS_DIR: Path = Path("./data/jobs")
    APP_WORK_DIR: Path = Path("./data/work")

    # Jobs
    APP_BACKGROUND_JOB_CONCURRENCY: int = 1
    APP_JOB_POLL_TTL_DAYS: int = 7
    APP_MAX_UPLOAD_MB: int = 64
    APP_SLICE_RATE_LIMIT: str = "10/minute"
    APP_RATE_LIMIT_ENABLED: bool = True
    APP_SLICER_WORKERS: int = 4

    # Slicer defaults
    APP_LAYER_HEIGHT: float = 0.3
    APP_EXTRUSION_WIDTH: float = 0.4
    APP_THRESHOLD_ANGLE: float | None = None
    APP_WALL_COUNT: int = 2
    APP_NONPLANAR_LAYER_COUNT: int = 2
    APP_INFILL_SPACING: float | None = None
    APP_INFILL_ANGLE: float = 0.0
    APP_EXTRUDER_BOX: str = "1,1,10"
    APP_WELD_TOLERANCE: float = 1e-6
    APP_METRICS_GRID: str = "350,356"

    # System
    APP_LOG_LEVEL: str = "INFO"
    APP_PORT: int = 8000

    @property
    def cors_allow_origins(self) -> list[str]:
        return [origin.strip() for origin in self.APP_CORS_ALLOW_ORIGINS.split(",") if origin.strip()]

    @property
    def cors_allow_methods(self) -> list[str]:
        return [method.strip() for method in self.APP_CORS_ALLOW_METHODS.split(",") if method.strip()]

    @property
    def cors_allow_headers(self) -> list[str]:
        return [header.strip() for header in self.APP_CORS_ALLOW_HEADERS.split(",") if header.strip()]

    @property
    def extruder_box(self) -> tuple[float, float, float]:
        return _parse_float_list(self.APP_EXTRUDER_BOX, 3, "APP_EXTRUDER_BOX")

    @property
    def metrics_grid(self) -> tuple[int, int]:
        nx, ny = _parse_float_list(self.APP_METRICS_GRID, 2, "APP_METRICS_GRID")
        return int(nx), int(ny)

    @property
    def max_upload_bytes(self) -> int:
        return self.APP_MAX_UPLOAD_MB * 1024 * 1024


settings = Settings()
