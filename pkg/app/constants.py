APP_VERSION = "1.0.0"
SERVICE_NAME = "Non-Planar Slicer API"
LOGGER_NAME = "slicer"

# mesh_io
DEFAULT_WELD_TOLERANCE = 1e-6
DEGENERATE_TRIANGLE_AREA = 1e-12

# nonplanar_id
RAY_EPSILON = 1e-4
MIN_PATCH_TRIANGLES = 2

# surface_offset
OFFSET_MIN_TRIANGLE_AREA = 1e-9

# planar_slice
PLANE_SNAP = 1e-9
ENDPOINT_TOLERANCE = 1e-6
MIN_REGION_AREA = 1e-6

# path2d
MITRE_LIMIT = 1000.0
SLIVER_AREA = 1e-9
SHARED_VERTEX_TOLERANCE = 1e-7

# projection
BARYCENTRIC_EPS = 1e-3
STRICT_BARYCENTRIC_EPS = 1e-9
SUBDIVISION_MERGE_DISTANCE = 1e-9
TRAVEL_LIFT_MM = 1.0

# metrics
DEFAULT_METRICS_GRID = (350, 356)
