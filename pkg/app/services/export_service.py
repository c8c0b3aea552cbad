from __future__ import annotations

from pathlib import Path
from typing import Iterable
import json
import logging
import os
import tempfile

import numpy as np

from app.constants import LOGGER_NAME
from app.models import SliceSummary, SlicerConfig
from app.slicer.errors import OutputError
from app.slicer.types import Layer, PolygonChain, Toolpath
from app.utils.report_utils import format_report_text


logger = logging.getLogger(LOGGER_NAME)

TOOLPATH_FILE = "toolpath.json"
OBJ_FILE = "paths.obj"
REPORT_TEXT_FILE = "report.txt"
REPORT_JSON_FILE = "report.json"
PROFILES_FILE = "profiles.json"

SVG_MARGIN_MM = 2.0
SVG_STYLES = {
    "section": 'fill="none" fill-rule="evenodd" stroke="#888888" stroke-width="0.05"',
    "outer_wall": 'fill="none" fill-rule="evenodd" stroke="#1f4e9c" stroke-width="0.1"',
    "inner_wall": 'fill="none" fill-rule="evenodd" stroke="#4f8fd6" stroke-width="0.1"',
    "infill": 'fill="none" stroke="#c8452c" stroke-width="0.08"',
}


def toolpath_record(toolpath: Toolpath) -> dict:
    return {
        "role": toolpath.role.value,
        "kind": toolpath.kind.value,
        "layer": int(toolpath.layer),
        "patch": None if toolpath.patch is None else int(toolpath.patch),
        "points": [
            {
                "x": float(p[0]),
                "y": float(p[1]),
                "z": float(p[2]),
                "nx": float(n[0]),
                "ny": float(n[1]),
                "nz": float(n[2]),
                "e": bool(e),
            }
            for p, n, e in zip(toolpath.positions, toolpath.orientations, toolpath.extruding)
        ],
    }


class ExportService:
    """Writes slicing artifacts; every file is staged in a temp file and moved into place."""

    def _atomic_write_text(self, path: Path, text: str) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        try:
            with tempfile.NamedTemporaryFile("w", encoding="utf-8", dir=path.parent, delete=False, newline="\n") as tmp_file:
                tmp_file.write(text)
                tmp_path = Path(tmp_file.name)
            os.replace(tmp_path, path)
        except OSError as e:
            raise OutputError(f"cannot write artifact: {e}", entity=str(path)) from e
        return path

    def _atomic_write_json(self, path: Path, payload: object, *, indent: int | None = 2) -> Path:
        return self._atomic_write_text(path, json.dumps(payload, ensure_ascii=False, indent=indent) + "\n")

    def check_output_dir(self, directory: Path) -> None:
        """
        Make sure artifacts can be written before any work is done.

        Raises:
            OutputError: If the directory cannot be created or written
        """
        try:
            directory.mkdir(parents=True, exist_ok=True)
            with tempfile.NamedTemporaryFile("w", dir=directory, prefix=".write-check-", delete=True) as scratch:
                scratch.write("ok")
        except OSError as e:
            raise OutputError(f"output directory not writable: {e.strerror or e}", entity=str(directory)) from e

    def write_toolpath_json(self, path: Path, toolpaths: Iterable[Toolpath], config: SlicerConfig | None = None) -> Path:
        payload: dict = {}
        if config is not None:
            payload["config"] = config.model_dump(mode="json")
        payload["paths"] = [toolpath_record(toolpath) for toolpath in toolpaths]
        return self._atomic_write_json(path, payload, indent=None)

    def write_paths_obj(self, path: Path, toolpaths: Iterable[Toolpath]) -> Path:
        """Extruding runs as OBJ polylines, grouped per path."""
        lines = ["# slicer toolpaths"]
        vertex_count = 0
        for number, toolpath in enumerate(toolpaths):
            lines.append(f"o {toolpath.kind.value}_{toolpath.role.value}_layer{toolpath.layer}_{number}")
            run: list[int] = []
            for position, extruding in zip(toolpath.positions, toolpath.extruding):
                if not extruding and len(run) > 1:
                    lines.append("l " + " ".join(map(str, run)))
                if not extruding:
                    run = []
                lines.append(f"v {float(position[0])!r} {float(position[1])!r} {float(position[2])!r}")
                vertex_count += 1
                run.append(vertex_count)
            if len(run) > 1:
                lines.append("l " + " ".join(map(str, run)))
        return self._atomic_write_text(path, "\n".join(lines) + "\n")

    def _svg_polyline(self, points: np.ndarray, style: str) -> str:
        coords = " ".join(f"{float(x)!r},{float(-y)!r}" for x, y in points)
        return f'  <polyline points="{coords}" {style}/>'

    def _svg_region(self, chains: Iterable[PolygonChain], style: str) -> str:
        """Shells and holes as subpaths of one path so the even-odd rule leaves holes open."""
        rings = []
        for chain in chains:
            points = " L ".join(f"{float(x)!r},{float(-y)!r}" for x, y in chain.vertices)
            rings.append(f"M {points} Z")
        return f'  <path d="{" ".join(rings)}" {style}/>'

    def write_layer_svgs(self, directory: Path, layers: list[Layer], bounds: tuple[float, float, float, float]) -> list[Path]:
        """One layer_####.svg per planar layer: section outline, walls and infill, y pointing up."""
        x0, y0, x1, y1 = bounds
        view = f"{x0 - SVG_MARGIN_MM!r} {-y1 - SVG_MARGIN_MM!r} {x1 - x0 + 2 * SVG_MARGIN_MM!r} {y1 - y0 + 2 * SVG_MARGIN_MM!r}"
        paths = []
        for layer in layers:
            body = [
                f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{view}" width="{x1 - x0 + 2 * SVG_MARGIN_MM!r}mm" '
                f'height="{y1 - y0 + 2 * SVG_MARGIN_MM!r}mm">',
                f"  <title>layer {layer.index} z={layer.z!r}</title>",
            ]
            if layer.chains:
                body.append(self._svg_region(layer.chains, SVG_STYLES["section"]))
            for k, wall in enumerate(layer.walls):
                if wall:
                    body.append(self._svg_region(wall, SVG_STYLES["outer_wall" if k == 0 else "inner_wall"]))
            body.extend(self._svg_polyline(path.points, SVG_STYLES["infill"]) for path in layer.infill if not path.is_empty)
            body.append("</svg>")
            paths.append(self._atomic_write_text(directory / f"layer_{layer.index:04d}.svg", "\n".join(body) + "\n"))
        return paths

    def write_report(self, directory: Path, summary: SliceSummary) -> list[Path]:
        return [
            self._atomic_write_text(directory / REPORT_TEXT_FILE, format_report_text(summary)),
            self._atomic_write_json(directory / REPORT_JSON_FILE, summary.report.model_dump(mode="json")),
        ]

    def write_profiles(self, path: Path, profiles: dict) -> Path:
        return self._atomic_write_json(path, profiles)
