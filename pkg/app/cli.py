from __future__ import annotations

from pathlib import Path
import argparse
import json
import logging
import logging.config
import sys

from pydantic import ValidationError

from app.config import APP_DIR, settings
from app.constants import APP_VERSION, LOGGER_NAME
from app.models import JobConfig
from app.services.slicing_service import SlicingService
from app.slicer.errors import MeshFormatError, OutputError, SlicerError
from app.slicer.samples import write_samples
from app.utils.config_utils import build_slicer_config
from app.utils.report_utils import format_summary_line


logger = logging.getLogger(LOGGER_NAME)

LOG_CONFIG_FILE = APP_DIR / "uvicorn_log_config.json"

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_MESH = 3
EXIT_GEOMETRY = 4
EXIT_OUTPUT = 5


def configure_logging(level: str | None = None) -> None:
    with open(LOG_CONFIG_FILE, "r", encoding="utf-8") as f:
        config = json.load(f)
    config["loggers"].setdefault(LOGGER_NAME, {"handlers": ["default"], "propagate": False})
    config["loggers"][LOGGER_NAME]["level"] = (level or settings.APP_LOG_LEVEL).upper()
    logging.config.dictConfig(config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m app",
        description="Planar and non-planar STL slicer",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {APP_VERSION}")
    parser.add_argument("--log-level", default=None, help="Overrides APP_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    slice_parser = commands.add_parser("slice", help="Slice an STL file into toolpaths")
    slice_parser.add_argument("input", type=Path, help="Input STL file")
    slice_parser.add_argument("--layer-height", type=float, default=None, help="Layer height in mm")
    slice_parser.add_argument("--extrusion-width", type=float, default=None, help="Extrusion width in mm")
    slice_parser.add_argument("--threshold-angle", type=float, default=None, help="Threshold angle in degrees")
    slice_parser.add_argument("--walls", type=int, default=None, help="Number of perimeter walls")
    slice_parser.add_argument("--nonplanar-layers", type=int, default=None, help="Non-planar layers per patch")
    slice_parser.add_argument("--infill-spacing", type=float, default=None, help="Infill pass spacing in mm")
    slice_parser.add_argument("--infill-angle", type=float, default=None, help="Infill base angle in degrees")
    slice_parser.add_argument("--force-planar", action="store_true", help="Skip non-planar detection")
    slice_parser.add_argument("--report", action="store_true", help="Compute Chamfer distances and profiles.json")
    slice_parser.add_argument("--svg", action="store_true", help="Write one SVG per planar layer")
    slice_parser.add_argument("--obj", action="store_true", help="Write toolpath polylines as OBJ")
    slice_parser.add_argument(
        "--metrics-grid",
        type=int,
        nargs=2,
        default=None,
        metavar=("NX", "NY"),
        help="Metrics sampling grid; overrides APP_METRICS_GRID",
    )
    slice_parser.add_argument("-o", "--output", type=Path, default=None, help="Output directory")

    samples_parser = commands.add_parser("samples", help="Write the bundled sample meshes as STL")
    samples_parser.add_argument("-o", "--output", type=Path, required=True, help="Output directory")
    return parser


def _job_from_args(args: argparse.Namespace) -> JobConfig:
    slicer = build_slicer_config(
        layer_height=args.layer_height,
        extrusion_width=args.extrusion_width,
        threshold_angle_deg=args.threshold_angle,
        wall_count=args.walls,
        nonplanar_layer_count=args.nonplanar_layers,
        infill_spacing=args.infill_spacing,
        infill_base_angle_deg=args.infill_angle,
    )
    return JobConfig(
        slicer=slicer,
        input_path=args.input,
        output_dir=args.output or settings.APP_OUTPUT_DIR / args.input.stem,
        export_svg=args.svg,
        export_obj=args.obj,
        report=args.report,
        force_planar=args.force_planar,
        metrics_grid=tuple(args.metrics_grid) if args.metrics_grid else settings.metrics_grid,
    )


def run_slice(job: JobConfig, service: SlicingService | None = None) -> int:
    service = service or SlicingService()
    try:
        summary = service.run(job)
    except MeshFormatError as e:
        logger.error("Input mesh error: %s", e)
        return EXIT_MESH
    except OutputError as e:
        logger.error("Output error: %s", e)
        return EXIT_OUTPUT
    except SlicerError as e:
        logger.error("Geometry error: %s", e)
        return EXIT_GEOMETRY
    except Exception as e:
        logger.exception("Unexpected error: %s", e)
        return EXIT_UNEXPECTED

    print(format_summary_line(summary))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    if args.command == "samples":
        try:
            paths = write_samples(args.output)
        except OSError as e:
            logger.error("Output error: cannot write samples to %s: %s", args.output, e)
            return EXIT_OUTPUT
        for path in paths:
            print(path)
        return EXIT_OK

    try:
        job = _job_from_args(args)
    except ValidationError as e:
        parser.error(f"invalid slicing parameters: {e.errors()[0]['msg']}")
    return run_slice(job)


if __name__ == "__main__":
    sys.exit(main())
