from __future__ import annotations

import logging
import threading

from app.constants import LOGGER_NAME


logger = logging.getLogger(LOGGER_NAME)


class Diagnostics:
    """Collects pipeline warnings so they can be logged and reported together."""

    def __init__(self) -> None:
        self._warnings: list[str] = []
        self._lock = threading.Lock()

    @property
    def warnings(self) -> list[str]:
        with self._lock:
            return list(self._warnings)

    def warn(self, message: str, *args: object) -> None:
        text = message % args if args else message
        logger.warning(text)
        with self._lock:
            self._warnings.append(text)

    def extend(self, other: Diagnostics) -> None:
        items = other.warnings
        with self._lock:
            self._warnings.extend(items)


def warn(diagnostics: Diagnostics | None, message: str, *args: object) -> None:
    if diagnostics is None:
        logger.warning(message, *args)
    else:
        diagnostics.warn(message, *args)
