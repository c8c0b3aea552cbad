from app.config import settings
from app.models import SlicerConfig


def build_slicer_config(**overrides) -> SlicerConfig:
    """Slicer parameters from the environment, with explicit non-None overrides on top."""
    width, depth, height = settings.extruder_box
    values = {
        "layer_height": settings.APP_LAYER_HEIGHT,
        "extrusion_width": settings.APP_EXTRUSION_WIDTH,
        "threshold_angle_deg": settings.APP_THRESHOLD_ANGLE,
        "wall_count": settings.APP_WALL_COUNT,
        "nonplanar_layer_count": settings.APP_NONPLANAR_LAYER_COUNT,
        "infill_spacing": settings.APP_INFILL_SPACING,
        "infill_base_angle_deg": settings.APP_INFILL_ANGLE,
        "extruder_box": {"width": width, "depth": depth, "height": height},
        "weld_tolerance": settings.APP_WELD_TOLERANCE,
    }
    values.update({key: value for key, value in overrides.items() if value is not None})
    return SlicerConfig(**values)
