"""Synthetic sensors, deformations, trajectories, and timing scenarios.

The default synthetic sensor mirrors the real device's layout: two rigid
contact-layer rectangles whose top corners feed PnP, and two deformable
inner edges, one per face, each confined to a fixed CAD-frame plane.
The internal camera sits below the structure looking up with a slight
tilt so that back-projection rays meet the edge planes at a healthy
angle.

Timing scenarios model a capture-triggered sync rig: during the sync
phase the clock display switches to a fresh marker exactly at each
camera exposure, so a frame's decoded display time equals its true
capture time and the reception offset is pure transmission latency
(plus whatever jitter the scenario injects).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import EdgeOutOfView
from ..fiducial import MarkerDescriptor, default_dictionary
from ..geometry import (
    CameraIntrinsics,
    Handedness,
    Plane,
    RigidTransform,
    compose,
    invert,
    quat_from_axis_angle,
    rh_to_lh,
)
from ..handeye import CalibrationSet, MAX_GRIPPER_WIDTH
from ..sync import PoseTrack, StreamSample
from ..tactile import Face, SensorGeometry
from .render import project_polyline, render_marker_view, render_polylines

# --- default synthetic sensor (meters) -----------------------------------------

EDGE_X = 0.013            # inner edge lateral offset per face
LAYER_X = 0.016           # contact layer lateral offset per face
LAYER_Y = (0.002, 0.009)  # contact layer depth span
LAYER_Z = (0.024, 0.070)  # contact layer height span
EDGE_Y = {Face.LEFT_FACE: -0.0055, Face.RIGHT_FACE: -0.0075}
EDGE_Z = (0.015, 0.075)
EDGE_SAMPLES = 121
CAMERA_POSITION = np.array([0.0, 0.0, -0.010])
CAMERA_TILT_DEG = 12.0    # optical axis tilted toward the edge planes

TACTILE_WIDTH = 640
TACTILE_HEIGHT = 480
TACTILE_FOCAL = 400.0


def default_tactile_intrinsics(width: int = TACTILE_WIDTH, height: int = TACTILE_HEIGHT) -> CameraIntrinsics:
    scale = width / TACTILE_WIDTH
    return CameraIntrinsics(
        fx=TACTILE_FOCAL * scale,
        fy=TACTILE_FOCAL * scale,
        cx=width / 2.0,
        cy=height / 2.0,
        width=width,
        height=height,
    )


def default_tactile_extrinsics() -> RigidTransform:
    """Camera-from-CAD for the nominal internal camera placement."""
    theta = math.radians(CAMERA_TILT_DEG)
    # camera axes in CAD coordinates: x across, z up-and-toward-the-edges
    r_wc = np.array([
        [1.0, 0.0, 0.0],
        [0.0, math.cos(theta), -math.sin(theta)],
        [0.0, math.sin(theta), math.cos(theta)],
    ])
    r = r_wc.T
    t = -r @ CAMERA_POSITION
    return RigidTransform.from_rotation_translation(r, t)


def _layer_outline(face: Face) -> np.ndarray:
    x = LAYER_X if face is Face.RIGHT_FACE else -LAYER_X
    y0, y1 = LAYER_Y
    z0, z1 = LAYER_Z
    # cycle: top edge (low y -> high y), then down and back
    return np.array([
        [x, y0, z1],
        [x, y1, z1],
        [x, y1, z0],
        [x, y0, z0],
    ])


def default_sensor_geometry() -> SensorGeometry:
    corners = np.vstack([
        _layer_outline(Face.LEFT_FACE)[:2],
        _layer_outline(Face.RIGHT_FACE)[:2],
    ])
    planes = {face: Plane(np.array([0.0, 1.0, 0.0]), EDGE_Y[face]) for face in Face}
    rest = {}
    z = np.linspace(EDGE_Z[0], EDGE_Z[1], EDGE_SAMPLES)
    for face in Face:
        x = EDGE_X if face is Face.RIGHT_FACE else -EDGE_X
        rest[face] = np.column_stack([np.full_like(z, x), np.full_like(z, EDGE_Y[face]), z])
    return SensorGeometry(
        cad_corners=corners,
        edge_planes=planes,
        cad_rest_edges=rest,
        corners_coplanar=True,
    )


@dataclass(frozen=True)
class SensorModel:
    """One synthetic sensor unit: pipeline-facing geometry plus the
    rendering-only extras (full layer outlines, true camera placement)."""

    sensor_id: str
    geometry: SensorGeometry
    intrinsics: CameraIntrinsics
    extrinsics: RigidTransform          # true camera-from-CAD
    layer_outlines: dict[Face, np.ndarray] = field(
        default_factory=lambda: {f: _layer_outline(f) for f in Face}
    )


def default_sensor_model(
    sensor_id: str = "tactile",
    rng: np.random.Generator | None = None,
    width: int = TACTILE_WIDTH,
    height: int = TACTILE_HEIGHT,
) -> SensorModel:
    """Nominal sensor, optionally perturbed to model unit-to-unit variation.

    Perturbations touch the camera mounting (rotation up to ~1.2 deg,
    translation up to 1.2 mm) and the lens (focal length ~2 percent,
    principal point ~3 px); the CAD geometry is shared by design.
    """
    intr = default_tactile_intrinsics(width, height)
    extr = default_tactile_extrinsics()
    if rng is not None:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        dq = quat_from_axis_angle(axis, rng.uniform(-1.0, 1.0) * math.radians(1.2))
        dt = rng.uniform(-0.0012, 0.0012, size=3)
        extr = compose(RigidTransform(dq, dt), extr)
        intr = CameraIntrinsics(
            fx=intr.fx * float(rng.uniform(0.98, 1.02)),
            fy=intr.fy * float(rng.uniform(0.98, 1.02)),
            cx=intr.cx + float(rng.uniform(-3.0, 3.0)),
            cy=intr.cy + float(rng.uniform(-3.0, 3.0)),
            width=intr.width,
            height=intr.height,
        )
    return SensorModel(
        sensor_id=sensor_id,
        geometry=default_sensor_geometry(),
        intrinsics=intr,
        extrinsics=extr,
    )


# --- deformation ----------------------------------------------------------------

@dataclass(frozen=True)
class DeformationParams:
    """Per-face planar bending of the inner edges.

    Positive amplitude bends a face inward (toward the gripped object).
    The profile polynomial is evaluated over normalized arc position
    s in [0, 1] (clamped base, free tip) and scaled so its maximum
    equals the commanded amplitude. schedule 'constant' ignores time;
    'sine' modulates the amplitude between 0 and its peak.
    """

    amplitudes: dict[Face, float]
    profile: tuple[float, ...] = (0.0, 0.0, 1.0)   # c0 + c1 s + c2 s^2
    schedule: str = "constant"
    period: float = 4.0
    phases: dict[Face, float] = field(default_factory=lambda: {f: 0.0 for f in Face})

    def amplitude_at(self, face: Face, t: float) -> float:
        peak = self.amplitudes.get(face, 0.0)
        if self.schedule == "constant":
            return peak
        if self.schedule == "sine":
            ph = self.phases.get(face, 0.0)
            return peak * 0.5 * (1.0 - math.cos(2.0 * math.pi * (t / self.period + ph)))
        raise ValueError(f"unknown schedule {self.schedule!r}")


def gen_deformation(
    geom: SensorGeometry, params: DeformationParams, t: float = 0.0
) -> dict[Face, np.ndarray]:
    """Deformed edge polylines in the CAD frame; planarity is built in."""
    out = {}
    for face in Face:
        rest = geom.cad_rest_edges[face]
        z = rest[:, 2]
        s = (z - z.min()) / max(z.max() - z.min(), 1e-12)
        powers = np.vstack([s**k for k in range(len(params.profile))])
        prof = np.asarray(params.profile) @ powers
        peak = np.max(np.abs(prof))
        if peak > 0:
            prof = prof / peak
        amp = params.amplitude_at(face, t)
        direction = 1.0 if face is Face.LEFT_FACE else -1.0
        deformed = rest.copy()
        deformed[:, 0] = rest[:, 0] + direction * amp * prof
        out[face] = deformed
    return out


def render_tactile_image(
    edges: dict[Face, np.ndarray],
    model: SensorModel,
    extrinsics: RigidTransform | None = None,
    background: int = 6,
) -> tuple[np.ndarray, dict]:
    """Synthetic internal-camera frame plus its ground-truth sidecar.

    Bright anti-aliased strokes: the two (possibly deformed) inner edges
    and the two contact-layer outlines. The sidecar records the exact
    projected pixel chains of every stroke.
    """
    extr = extrinsics if extrinsics is not None else model.extrinsics
    k = model.intrinsics
    shape = (k.height, k.width)
    edge_px, outline_px = {}, {}
    polylines = []
    for face in Face:
        try:
            chain = project_polyline(edges[face], extr, k)
            outline = project_polyline(
                np.vstack([model.layer_outlines[face], model.layer_outlines[face][:1]]), extr, k
            )
        except ValueError as e:
            raise EdgeOutOfView(str(e)) from e
        for px in (chain, outline):
            if px[:, 0].min() < 2 or px[:, 0].max() > k.width - 3 or px[:, 1].min() < 2 or px[:, 1].max() > k.height - 3:
                raise EdgeOutOfView(f"{face.value} structures leave the image")
        edge_px[face] = chain
        outline_px[face] = outline
        polylines.append((chain, 255))
        polylines.append((outline, 230))
    img = np.full(shape, background, dtype=np.uint8)
    for chain, peak in polylines:
        img = render_polylines(shape, [chain], sigma=0.9, peak=peak, canvas=img)
    sidecar = {"edges_px": edge_px, "outlines_px": outline_px, "edges_cad": dict(edges)}
    return img, sidecar


# --- trajectories and timing ------------------------------------------------------

@dataclass(frozen=True)
class StreamSpec:
    rate_hz: float
    latency: float = 0.0
    phase: float = 0.0          # capture grid offset, seconds
    jitter: float = 0.0         # uniform +- half-width on reception times

    def __post_init__(self):
        if self.rate_hz <= 0:
            raise ValueError("stream rate must be positive")
        if self.latency < 0:
            raise ValueError("stream latency must be non-negative")


HANDS = ("left", "right")
TACTILE_PER_HAND = 2


def stream_ids() -> list[str]:
    ids = []
    for hand in HANDS:
        ids.append(f"{hand}_visual")
        for i in range(TACTILE_PER_HAND):
            ids.append(f"{hand}_tactile{i}")
        ids.append(f"{hand}_pose")
    return ids


def default_stream_specs() -> dict[str, StreamSpec]:
    """Paper-reported transmission latencies with small capture phases."""
    specs = {}
    phases = {
        "left_visual": 0.0,
        "right_visual": 0.004,
        "left_tactile0": 0.002,
        "left_tactile1": 0.006,
        "right_tactile0": 0.003,
        "right_tactile1": 0.007,
        "left_pose": 0.001,
        "right_pose": 0.005,
    }
    for sid in stream_ids():
        if sid.endswith("_pose"):
            specs[sid] = StreamSpec(rate_hz=72.0, latency=0.01, phase=phases[sid])
        elif sid.endswith("_visual"):
            specs[sid] = StreamSpec(rate_hz=30.0, latency=0.14, phase=phases[sid])
        else:
            specs[sid] = StreamSpec(rate_hz=30.0, latency=0.08, phase=phases[sid])
    return specs


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to synthesize one recording session."""

    duration_s: float = 4.0
    seed: int = 0
    streams: dict[str, StreamSpec] = field(default_factory=default_stream_specs)
    deformation: DeformationParams = field(
        default_factory=lambda: DeformationParams(
            amplitudes={Face.LEFT_FACE: 0.006, Face.RIGHT_FACE: 0.004},
            schedule="sine",
        )
    )
    tactile_width: int = TACTILE_WIDTH
    tactile_height: int = TACTILE_HEIGHT
    sync_frames: int = 12           # clock frames per camera in the sync phase
    handshake_count: int = 100
    handeye_pairs: int = 10
    workspace: float = 0.4          # trajectory box half-extent, meters
    marker_size: float = 0.02

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        for sid, spec in self.streams.items():
            if spec.latency < 0:
                raise ValueError(f"negative latency for {sid}")


def gen_trajectory(spec: ScenarioSpec, hand: str, rng: np.random.Generator) -> PoseTrack:
    """Smooth right-handed world-from-controller trajectory.

    Piecewise-geodesic between seeded waypoints spaced ~1.5 s apart.
    """
    n_way = max(3, int(spec.duration_s / 1.5) + 2)
    times = np.linspace(-0.5, spec.duration_s + 1.0, n_way)
    base = np.array([0.15 if hand == "right" else -0.15, 0.0, 0.3])
    poses = []
    for _ in times:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        q = quat_from_axis_angle(axis, rng.uniform(-0.6, 0.6))
        t = base + rng.uniform(-spec.workspace / 2, spec.workspace / 2, size=3)
        poses.append(RigidTransform(q, t))
    return PoseTrack(list(times), poses, stream_id=f"{hand}_pose")


def capture_times(spec: ScenarioSpec, sid: str) -> np.ndarray:
    s = spec.streams[sid]
    n = int(np.floor((spec.duration_s - s.phase) * s.rate_hz)) + 1
    return s.phase + np.arange(n) / s.rate_hz


def width_schedule(t: np.ndarray | float, hand: str) -> np.ndarray | float:
    """Scripted gripper width, always inside the hardware span."""
    ph = 0.0 if hand == "left" else 0.9
    return 0.042 + 0.03 * np.sin(2.0 * math.pi * np.asarray(t) / 3.0 + ph)


@dataclass
class PoseStreamBundle:
    """Output of gen_pose_stream: raw streams plus full ground truth."""

    pose_streams: dict[str, list[StreamSample]]       # LEFT-handed payloads
    camera_streams: dict[str, list[StreamSample]]     # payload: frame index
    handshakes: dict[str, list[tuple[float, float]]]  # per pose stream
    clock_streams: dict[str, list[StreamSample]]      # payload: marker id
    clock_codebooks: dict[str, dict[int, float]]
    true_tracks: dict[str, PoseTrack]                 # RIGHT-handed truth
    true_capture: dict[str, np.ndarray]
    true_latencies: dict[str, float]


def gen_pose_stream(spec: ScenarioSpec, rng: np.random.Generator | None = None) -> PoseStreamBundle:
    """Timed streams with injected latencies, a capture-triggered clock
    phase per camera, handshake logs, and the ground-truth sidecar."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    dictionary = default_dictionary()
    pose_streams: dict[str, list[StreamSample]] = {}
    camera_streams: dict[str, list[StreamSample]] = {}
    handshakes: dict[str, list[tuple[float, float]]] = {}
    clock_streams: dict[str, list[StreamSample]] = {}
    clock_codebooks: dict[str, dict[int, float]] = {}
    true_tracks: dict[str, PoseTrack] = {}
    true_capture: dict[str, np.ndarray] = {}
    true_latencies = {sid: spec.streams[sid].latency for sid in spec.streams}

    for hand in HANDS:
        sid = f"{hand}_pose"
        track = gen_trajectory(spec, hand, rng)
        true_tracks[sid] = track
        s = spec.streams[sid]
        taus = capture_times(spec, sid)
        true_capture[sid] = taus
        samples = []
        for tau in taus:
            jit = rng.uniform(-s.jitter, s.jitter) if s.jitter > 0 else 0.0
            pose_rh = track.sample(float(tau))
            samples.append(
                StreamSample(t_rec=float(tau + s.latency + jit), payload=rh_to_lh(pose_rh), stream_id=sid)
            )
        pose_streams[sid] = samples
        # handshake log: protocol timestamps, same transport latency
        hs = []
        for i in range(spec.handshake_count):
            t_act = 0.05 * i
            jit = rng.uniform(-s.jitter, s.jitter) if s.jitter > 0 else 0.0
            hs.append((t_act, t_act + s.latency + jit))
        handshakes[sid] = hs

    for sid in stream_ids():
        if sid.endswith("_pose"):
            continue
        s = spec.streams[sid]
        taus = capture_times(spec, sid)
        true_capture[sid] = taus
        samples = []
        for i, tau in enumerate(taus):
            jit = rng.uniform(-s.jitter, s.jitter) if s.jitter > 0 else 0.0
            samples.append(StreamSample(t_rec=float(tau + s.latency + jit), payload=i, stream_id=sid))
        camera_streams[sid] = samples
        # sync phase: one fresh marker per exposure, display time == capture
        n_clock = min(spec.sync_frames, len(dictionary))
        clock_taus = np.arange(n_clock) / s.rate_hz
        codebook = {mid: float(clock_taus[mid]) for mid in range(n_clock)}
        clock_codebooks[sid] = codebook
        cstream = []
        for mid in range(n_clock):
            jit = rng.uniform(-s.jitter, s.jitter) if s.jitter > 0 else 0.0
            cstream.append(
                StreamSample(t_rec=float(clock_taus[mid] + s.latency + jit), payload=mid, stream_id=sid)
            )
        clock_streams[sid] = cstream

    return PoseStreamBundle(
        pose_streams=pose_streams,
        camera_streams=camera_streams,
        handshakes=handshakes,
        clock_streams=clock_streams,
        clock_codebooks=clock_codebooks,
        true_tracks=true_tracks,
        true_capture=true_capture,
        true_latencies=true_latencies,
    )


# --- hand-eye forward synthesis ----------------------------------------------------

def gen_handeye_set(
    x_true: RigidTransform,
    y_true: RigidTransform,
    n: int = 10,
    noise_rot_deg: float = 0.0,
    noise_trans: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[CalibrationSet, dict]:
    """Forward-synthesized calibration pairs satisfying A_k X = Y B_k.

    B_k are sampled with rotations spanning multiple axes; measurement
    noise (if any) perturbs the A side. Returns (set, sidecar) with the
    sidecar holding the exact inputs.
    """
    if n < 3:
        raise ValueError("need n >= 3 pairs")
    rng = rng if rng is not None else np.random.default_rng(0)
    # deterministic axis coverage plus randomized angles/positions
    base_axes = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    pairs = []
    bs = []
    for k in range(n):
        axis = base_axes[k % 3] + rng.normal(scale=0.3, size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(math.radians(25.0), math.radians(70.0)) * (1 if k % 2 == 0 else -1)
        b = RigidTransform(quat_from_axis_angle(axis, angle), rng.uniform(-0.3, 0.3, size=3))
        a = compose(compose(y_true, b), invert(x_true))
        if noise_rot_deg > 0 or noise_trans > 0:
            n_axis = rng.normal(size=3)
            n_axis /= np.linalg.norm(n_axis)
            dq = quat_from_axis_angle(n_axis, rng.normal(scale=math.radians(noise_rot_deg)))
            dt = rng.normal(scale=noise_trans, size=3)
            a = compose(a, RigidTransform(dq, dt))
        pairs.append((a, b))
        bs.append(b)
    sidecar = {"x_true": x_true, "y_true": y_true, "n": n,
               "noise_rot_deg": noise_rot_deg, "noise_trans": noise_trans}
    return CalibrationSet(pairs=tuple(pairs)), sidecar
