"""Turn raw bimanual handheld demonstration recordings into calibrated,
temporally aligned, policy-ready episodes.

Subpackages cover SE(3)/camera geometry, square fiducial markers,
tactile point-cloud reconstruction, multi-stream synchronization,
AX = YB hand-eye calibration, the processing pipeline with its episode
container, and a synthetic ground-truth oracle used by the test suite.
"""

__version__ = "0.1.0"

from .geometry import (
    CameraIntrinsics,
    Handedness,
    Pixel,
    Plane,
    Point3,
    RigidTransform,
    backproject_to_plane,
    compose,
    invert,
    lh_to_rh,
    project,
    rh_to_lh,
    transform_plane,
)

__all__ = [
    "CameraIntrinsics",
    "Handedness",
    "Pixel",
    "Plane",
    "Point3",
    "RigidTransform",
    "backproject_to_plane",
    "compose",
    "invert",
    "lh_to_rh",
    "project",
    "rh_to_lh",
    "transform_plane",
    "__version__",
]
