"""Synthetic ground-truth generator backing the test suite.

Everything here is forward synthesis: scenes are constructed from known
geometry, cameras, latencies, and calibration transforms, and every
output ships with a sidecar holding the exact quantities the processing
pipeline is supposed to recover.
"""

from .render import (
    render_clock_frame,
    render_marker_view,
    render_polylines,
    project_polyline,
)
from .scenario import (
    DeformationParams,
    ScenarioSpec,
    SensorModel,
    StreamSpec,
    default_sensor_geometry,
    default_sensor_model,
    default_stream_specs,
    default_tactile_extrinsics,
    default_tactile_intrinsics,
    gen_deformation,
    gen_handeye_set,
    gen_pose_stream,
    render_tactile_image,
)
from .session import (
    GroundTruthSidecar,
    builtin_scenario,
    device_config_for,
    emit_session,
    load_scenario,
    sensor_models_for,
    true_handeye,
    visual_intrinsics,
)

__all__ = [
    "DeformationParams",
    "GroundTruthSidecar",
    "ScenarioSpec",
    "SensorModel",
    "StreamSpec",
    "builtin_scenario",
    "default_sensor_geometry",
    "default_sensor_model",
    "default_stream_specs",
    "default_tactile_extrinsics",
    "default_tactile_intrinsics",
    "device_config_for",
    "emit_session",
    "gen_deformation",
    "gen_handeye_set",
    "gen_pose_stream",
    "load_scenario",
    "project_polyline",
    "render_clock_frame",
    "render_marker_view",
    "render_polylines",
    "render_tactile_image",
    "sensor_models_for",
    "true_handeye",
    "visual_intrinsics",
]
