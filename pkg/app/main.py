from fastapi import FastAPI
from contextlib import asynccontextmanager
from time import monotonic
import logging
from pathlib import Path
from fastapi.middleware.cors import CORSMiddleware

from app.constants import APP_VERSION, LOGGER_NAME, SERVICE_NAME
from app.config import settings
from app.routers import slicing
from app.models import HealthResponse
from app.mcp.server import mcp
from slowapi.errors import RateLimitExceeded
from slowapi import _rate_limit_exceeded_handler

from app.rate_limiter import limiter
from app.services.service_container import get_service_container


logger = logging.getLogger(LOGGER_NAME)
app_started_at = monotonic()

# Get MCP HTTP app with lifespan BEFORE creating main app
mcp_http_app = mcp.http_app(
    path="/",
    stateless_http=True,
)

# FastMCP may wrap the Starlette app, so look one level down for the lifespan
mcp_lifespan = getattr(mcp_http_app, 'lifespan', None)
if mcp_lifespan is None and hasattr(mcp_http_app, 'app'):
    mcp_lifespan = getattr(mcp_http_app.app, 'lifespan', None)


@asynccontextmanager
async def app_lifespan(app_instance: FastAPI):
    container = get_service_container()
    logger.info(
        "Application startup: output_dir='%s', job concurrency=%d, slicer workers=%d",
        settings.APP_OUTPUT_DIR,
        settings.APP_BACKGROUND_JOB_CONCURRENCY,
        settings.APP_SLICER_WORKERS,
    )
    logger.info("Active slicing jobs at startup: %d", container.job_service.count_active_jobs())

    if mcp_lifespan is None:
        yield
        return

    async with mcp_lifespan(app_instance):
        yield

app = FastAPI(
    title=SERVICE_NAME,
    description="Planar and non-planar STL slicer with toolpath export and Chamfer-distance accuracy reports",
    version=APP_VERSION,
    root_path=settings.APP_ROOT_PATH,
    lifespan=app_lifespan,
)

app.state.limiter = limiter
app.add_exception_handler(RateLimitExceeded, _rate_limit_exceeded_handler)

if settings.cors_allow_origins:
    app.add_middleware(
        CORSMiddleware,
        allow_origins=settings.cors_allow_origins,
        allow_credentials=settings.APP_CORS_ALLOW_CREDENTIALS,
        allow_methods=settings.cors_allow_methods or ["*"],
        allow_headers=settings.cors_allow_headers or ["*"],
    )

app.include_router(slicing.router, prefix=settings.APP_API_PREFIX)

# Mounted so the MCP Starlette app sees path "/" rather than the full prefix
app.mount(f"{settings.APP_API_PREFIX}/mcp", mcp_http_app)


@app.get("/", include_in_schema=False)
async def root():
    """Root endpoint with API information (hidden from Swagger)."""
    return {
        "service": SERVICE_NAME,
        "version": APP_VERSION,
        "status": "running",
        "docs": "/docs",
        "endpoints": {
            "health": f"{settings.APP_API_PREFIX}/health",
            "submit": f"{settings.APP_API_PREFIX}/slicing/jobs",
            "status": f"{settings.APP_API_PREFIX}/slicing/jobs/{{job_id}}",
            "toolpath": f"{settings.APP_API_PREFIX}/slicing/jobs/{{job_id}}/toolpath",
            "mcp": f"{settings.APP_API_PREFIX}/mcp (StreamableHttpTransport)"
        }
    }


@app.get(f"{settings.APP_API_PREFIX}/health", response_model=HealthResponse, tags=["default"])
async def health_check():
    """Health check endpoint with artifact directory information."""
    container = get_service_container()
    output_path = Path(settings.APP_OUTPUT_DIR)
    return HealthResponse(
        status="healthy",
        version=APP_VERSION,
        uptime_seconds=monotonic() - app_started_at,
        output_path=str(output_path),
        output_accessible=output_path.exists() and output_path.is_dir(),
        active_jobs=container.job_service.count_active_jobs(),
    )


MCP_TOOLS = {
    "slice_stl": "slice an STL file readable by the server and return the run summary",
    "get_slicing_job": "status and report of a job submitted through the HTTP API",
    "compute_threshold_angle": "threshold angle for a layer height and extrusion width",
}


def custom_openapi():
    """OpenAPI schema with a documentation-only entry for the mounted MCP endpoint."""
    if app.openapi_schema:
        return app.openapi_schema

    from fastapi.openapi.utils import get_openapi

    schema = get_openapi(
        title=app.title,
        version=app.version,
        description=app.description,
        routes=app.routes,
    )

    mcp_path = f"{settings.APP_API_PREFIX}/mcp"
    tools = "\n".join(f"- `{name}`: {summary}" for name, summary in MCP_TOOLS.items())
    schema["paths"][mcp_path] = {
        "post": {
            "tags": ["MCP"],
            "summary": "MCP server (StreamableHttpTransport)",
            "description": (
                f"JSON-RPC 2.0 endpoint handled by FastMCP; connect with "
                f"`fastmcp.Client(\"http://<host>{mcp_path}/\")`.\n\nTools:\n{tools}"
            ),
            "operationId": "mcp_server",
            "responses": {
                "200": {"description": "MCP response (JSON-RPC)"},
                "307": {"description": f"Redirect to {mcp_path}/"},
            },
        }
    }

    app.openapi_schema = schema
    return app.openapi_schema


app.openapi = custom_openapi
