class SlicerError(Exception):
    """Base exception for slicing pipeline failures."""

    module = "slicer"

    def __init__(self, reason: str, *, entity: object | None = None):
        super().__init__(reason)
        self.reason = reason
        self.entity = entity

    def __str__(self) -> str:
        if self.entity is None:
            return f"[{self.module}] {self.reason}"
        return f"[{self.module}] {self.reason} (entity: {self.entity})"


class MeshFormatError(SlicerError):
    """STL file could not be parsed into triangles."""

    module = "mesh_io"


class OpenBoundaryError(SlicerError):
    """Boundary edges of a surface do not close into loops."""

    module = "nonplanar_id"


class DegenerateNormalError(SlicerError):
    """Incident facet normals of a vertex cancel out."""

    module = "surface_offset"


class OffsetLimitError(SlicerError):
    """Offset surface degenerated, flipped or intersected itself."""

    module = "surface_offset"


class CrossSectionError(SlicerError):
    """Cross-section chains cross each other."""

    module = "planar_slice"


class InvalidRegionError(SlicerError):
    """Nested chains do not describe a valid 2D region."""

    module = "path2d"


class DegenerateTriangleError(SlicerError):
    """Triangle has (almost) no area in the xy plane."""

    module = "projection"


class ProjectionMissError(SlicerError):
    """A 2D path point lies outside every triangle of the target surface."""

    module = "projection"


class MetricsError(SlicerError):
    """Point sets required by the accuracy comparison are empty."""

    module = "metrics"


class OutputError(SlicerError):
    """Artifacts could not be written."""

    module = "pipeline"
