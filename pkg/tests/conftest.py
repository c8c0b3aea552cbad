import os
import tempfile
from pathlib import Path

# settings are read at import time, so point storage at a scratch tree first
_TEST_ROOT = Path(tempfile.mkdtemp(prefix="slicer-tests-"))
os.environ.setdefault("APP_OUTPUT_DIR", str(_TEST_ROOT / "output"))
os.environ.setdefault("APP_JOBS_DIR", str(_TEST_ROOT / "jobs"))
os.environ.setdefault("APP_WORK_DIR", str(_TEST_ROOT / "work"))
os.environ.setdefault("APP_RATE_LIMIT_ENABLED", "false")
os.environ.setdefault("APP_METRICS_GRID", "40,40")
os.environ.setdefault("APP_SLICER_WORKERS", "2")

import numpy as np
import pytest

from app.models import SlicerConfig
from app.slicer import samples
from app.slicer.types import PolygonChain


def square_chain(size: float = 1.0, origin: tuple[float, float] = (0.0, 0.0), *, hole: bool = False, parent: int | None = None) -> PolygonChain:
    x, y = origin
    vertices = np.array([[x, y], [x + size, y], [x + size, y + size], [x, y + size]])
    if hole:
        vertices = vertices[::-1]
    return PolygonChain(vertices, closed=True, is_hole=hole, parent=parent)


@pytest.fixture
def config() -> SlicerConfig:
    return SlicerConfig()


@pytest.fixture(scope="session")
def cube_mesh():
    return samples.cube(20.0)


@pytest.fixture(scope="session")
def holed_box_mesh():
    return samples.box_with_square_hole(20.0, 10.0, 10.0)


@pytest.fixture(scope="session")
def hemisphere_mesh():
    return samples.hemisphere(20.0, 48)


@pytest.fixture(scope="session")
def dome_on_plate_mesh():
    return samples.dome_on_plate()


@pytest.fixture(scope="session")
def two_dome_mesh():
    return samples.two_dome_plate()


@pytest.fixture(scope="session")
def freeform_dome_mesh():
    return samples.freeform_dome()


@pytest.fixture
def make_square():
    return square_chain
