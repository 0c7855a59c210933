"""Emit complete synthetic recording sessions in the pipeline's layout.

A session directory contains, per hand, the visual and two tactile
frame streams (PNG files plus a text index of reception times), the
left-handed pose log, a pedal log, a sync phase (clock-marker frames,
per-stream codebooks, handshake logs), hand-eye calibration pose pairs,
a factory device configuration, and a ground_truth/ sidecar sufficient
to score every downstream stage without re-deriving anything.

Generation is seed-deterministic: the same ScenarioSpec yields a
byte-identical directory tree.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..calibio import CalibrationFile
from ..fiducial import default_dictionary
from ..geometry import RigidTransform, compose, invert, quat_from_axis_angle, rh_to_lh
from ..sync import PoseTrack
from ..tactile import Face
from .render import render_clock_frame, render_marker_view
from .scenario import (
    HANDS,
    TACTILE_PER_HAND,
    DeformationParams,
    PoseStreamBundle,
    ScenarioSpec,
    SensorModel,
    StreamSpec,
    default_sensor_model,
    default_stream_specs,
    gen_handeye_set,
    gen_pose_stream,
    render_tactile_image,
    gen_deformation,
    width_schedule,
    stream_ids,
)
from ..geometry import CameraIntrinsics

VISUAL_FOCAL = 600.0
VISUAL_WIDTH = 640
VISUAL_HEIGHT = 480
MARKER_MOUNT_OFFSET = 0.025     # finger marker center offset from the jaw face
FINGER_IDS = {"left": (0, 1), "right": (2, 3)}


def visual_intrinsics(width: int = VISUAL_WIDTH, height: int = VISUAL_HEIGHT) -> CameraIntrinsics:
    scale = width / VISUAL_WIDTH
    return CameraIntrinsics(
        fx=VISUAL_FOCAL * scale,
        fy=VISUAL_FOCAL * scale,
        cx=width / 2.0,
        cy=height / 2.0,
        width=width,
        height=height,
    )


@dataclass
class GroundTruthSidecar:
    """Everything needed to score a session without re-deriving truth."""

    latencies: dict[str, float]
    capture_times: dict[str, np.ndarray]
    handeye_x: dict[str, RigidTransform]
    handeye_y: dict[str, RigidTransform]
    widths: dict[str, np.ndarray]                 # per hand, at visual capture times
    pose_tracks: dict[str, PoseTrack]             # RIGHT-handed truth
    tactile_edges: dict[str, list[dict[Face, np.ndarray]]]   # per sensor, per frame
    tactile_extrinsics: dict[str, RigidTransform]
    seed: int


def true_handeye(hand: str) -> tuple[RigidTransform, RigidTransform]:
    """Fixed per-device hand-eye truth used by every scenario."""
    off = 0.0 if hand == "left" else 1.0
    x = RigidTransform(
        quat_from_axis_angle([0.3, 1.0, 0.2 + off], 0.4 + 0.2 * off),
        np.array([0.02, -0.015, 0.05 + 0.01 * off]),
    )
    y = RigidTransform(
        quat_from_axis_angle([0.0, 0.0, 1.0], 0.8),
        np.array([0.4, -0.2, 0.1]),
    )
    return x, y


def _marker_poses(width: float, t: float, hand: str) -> tuple[RigidTransform, RigidTransform]:
    """Finger marker poses in the visual camera frame for a given width."""
    sep = width / 2.0 + MARKER_MOUNT_OFFSET
    tilt = quat_from_axis_angle([1.0, 0.0, 0.0], math.radians(8.0))
    sway = 0.01 * math.sin(2.0 * math.pi * t / 5.0 + (0.0 if hand == "left" else 1.3))
    z = 0.25
    left = RigidTransform(tilt, np.array([-sep + sway, 0.0, z]))
    right = RigidTransform(tilt, np.array([sep + sway, 0.0, z]))
    return left, right


def _save_png(path: Path, img: np.ndarray) -> None:
    Image.fromarray(img, mode="L").save(path, format="PNG")


def _write_index(stream_dir: Path, names: list[str], t_recs: list[float]) -> None:
    lines = [f"{n} {t:.12f}" for n, t in zip(names, t_recs)]
    (stream_dir / "index.txt").write_text("\n".join(lines) + "\n")


def sensor_models_for(spec: ScenarioSpec) -> dict[str, SensorModel]:
    """Per-session tactile sensor units, perturbed deterministically."""
    rng = np.random.default_rng(spec.seed + 7919)
    models = {}
    for hand in HANDS:
        for i in range(TACTILE_PER_HAND):
            sid = f"{hand}_tactile{i}"
            models[sid] = default_sensor_model(
                sid, rng=rng, width=spec.tactile_width, height=spec.tactile_height
            )
    return models


def device_config_for(spec: ScenarioSpec, models: dict[str, SensorModel]) -> CalibrationFile:
    calib = CalibrationFile()
    # visual cameras run at the same resolution tier as the tactile ones
    vis_k = visual_intrinsics(spec.tactile_width, spec.tactile_height)
    for hand in HANDS:
        calib.set_intrinsics(f"{hand}_visual", vis_k)
        calib.set_marker_config(hand, FINGER_IDS[hand], spec.marker_size, 2.0 * MARKER_MOUNT_OFFSET)
    for sid, model in models.items():
        calib.set_intrinsics(sid, model.intrinsics)
        calib.set_sensor_geometry(sid, model.geometry)
    return calib


def emit_session(spec: ScenarioSpec, out_dir) -> GroundTruthSidecar:
    """Write a full session directory; returns the in-memory sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    bundle = gen_pose_stream(spec, rng)
    models = sensor_models_for(spec)
    dictionary = default_dictionary()
    vis_k = device_config_for(spec, models).intrinsics("left_visual")

    # pose logs (left-handed payloads, reception timeline)
    hands_dir = out / "hands"
    for hand in HANDS:
        hdir = hands_dir / hand
        hdir.mkdir(parents=True, exist_ok=True)
        sid = f"{hand}_pose"
        lines = []
        for s in bundle.pose_streams[sid]:
            p = s.payload
            vals = " ".join(f"{v:.12f}" for v in list(p.translation) + list(p.rotation))
            lines.append(f"{s.t_rec:.12f} {vals}")
        (hdir / "poses.log").write_text("\n".join(lines) + "\n")

    widths: dict[str, np.ndarray] = {}
    tactile_edges: dict[str, list[dict[Face, np.ndarray]]] = {sid: [] for sid in models}

    for hand in HANDS:
        # visual stream: two finger markers at the scripted width
        sid = f"{hand}_visual"
        sdir = hands_dir / hand / "visual"
        sdir.mkdir(parents=True, exist_ok=True)
        taus = bundle.true_capture[sid]
        widths[hand] = np.asarray(width_schedule(taus, hand))
        names, trecs = [], []
        ids = FINGER_IDS[hand]
        for i, sample in enumerate(bundle.camera_streams[sid]):
            tau = taus[i]
            w = float(widths[hand][i])
            pose_l, pose_r = _marker_poses(w, float(tau), hand)
            canvas = np.full((vis_k.height, vis_k.width), 200, dtype=np.uint8)
            img, _ = render_marker_view(dictionary[ids[0]], pose_l, vis_k, canvas=canvas)
            img, _ = render_marker_view(dictionary[ids[1]], pose_r, vis_k, canvas=img)
            name = f"frame_{i:06d}.png"
            _save_png(sdir / name, img)
            names.append(name)
            trecs.append(sample.t_rec)
        _write_index(sdir, names, trecs)

        # tactile streams: deformation schedule rendered per frame
        for ti in range(TACTILE_PER_HAND):
            sid = f"{hand}_tactile{ti}"
            sdir = hands_dir / hand / f"tactile{ti}"
            sdir.mkdir(parents=True, exist_ok=True)
            model = models[sid]
            taus = bundle.true_capture[sid]
            names, trecs = [], []
            for i, sample in enumerate(bundle.camera_streams[sid]):
                edges = gen_deformation(model.geometry, spec.deformation, float(taus[i]))
                img, _ = render_tactile_image(edges, model)
                name = f"frame_{i:06d}.png"
                _save_png(sdir / name, img)
                names.append(name)
                trecs.append(sample.t_rec)
                tactile_edges[sid].append(edges)
            _write_index(sdir, names, trecs)

    # pedal log trimmed inside the common coverage
    margin = 0.25
    (out / "pedal.log").write_text(
        f"start {margin:.12f}\nstop {spec.duration_s - margin:.12f}\n"
    )

    # sync phase: per-camera clock frames and codebooks, pose handshakes
    sync_dir = out / "sync"
    sync_dir.mkdir(exist_ok=True)
    for sid, stream in bundle.clock_streams.items():
        sdir = sync_dir / sid
        sdir.mkdir(exist_ok=True)
        names, trecs = [], []
        for i, sample in enumerate(stream):
            img = render_clock_frame(dictionary[sample.payload])
            name = f"frame_{i:06d}.png"
            _save_png(sdir / name, img)
            names.append(name)
            trecs.append(sample.t_rec)
        _write_index(sdir, names, trecs)
        cb = bundle.clock_codebooks[sid]
        lines = [f"{mid} {cb[mid]:.12f}" for mid in sorted(cb)]
        (sync_dir / f"{sid}_codebook.txt").write_text("\n".join(lines) + "\n")
    for hand in HANDS:
        sid = f"{hand}_pose"
        lines = [f"{ta:.12f} {tr:.12f}" for ta, tr in bundle.handshakes[sid]]
        (sync_dir / f"handshake_{hand}.log").write_text("\n".join(lines) + "\n")

    # hand-eye pose pairs per device
    handeye_x, handeye_y = {}, {}
    for hand_idx, hand in enumerate(HANDS):
        x_true, y_true = true_handeye(hand)
        handeye_x[hand], handeye_y[hand] = x_true, y_true
        cal, _ = gen_handeye_set(
            x_true, y_true, n=spec.handeye_pairs, rng=np.random.default_rng(spec.seed * 31 + hand_idx)
        )
        lines = ["# wq_handedness: right"]
        for a, b in cal.pairs:
            av = " ".join(f"{v:.12f}" for v in list(a.translation) + list(a.rotation))
            bv = " ".join(f"{v:.12f}" for v in list(b.translation) + list(b.rotation))
            lines.append(f"{av} {bv}")
        (out / f"handeye_pairs_{hand}.log").write_text("\n".join(lines) + "\n")

    # factory device configuration
    device_config_for(spec, models).save(out / "device_config.txt")

    # ground truth sidecar
    gt_dir = out / "ground_truth"
    gt_dir.mkdir(exist_ok=True)
    truth = {
        "seed": spec.seed,
        "duration_s": spec.duration_s,
        "latencies": bundle.true_latencies,
        "handeye": {
            hand: {
                "x": list(handeye_x[hand].translation) + list(handeye_x[hand].rotation),
                "y": list(handeye_y[hand].translation) + list(handeye_y[hand].rotation),
            }
            for hand in HANDS
        },
        "zero_offset": 2.0 * MARKER_MOUNT_OFFSET,
    }
    (gt_dir / "truth.json").write_text(json.dumps(truth, sort_keys=True, indent=2) + "\n")
    np.savez(gt_dir / "capture_times.npz", **bundle.true_capture)
    np.savez(gt_dir / "widths.npz", **widths)
    ext = {sid: np.concatenate([m.extrinsics.translation, m.extrinsics.rotation]) for sid, m in models.items()}
    np.savez(gt_dir / "tactile_extrinsics.npz", **ext)
    edge_arrays = {}
    for sid, frames in tactile_edges.items():
        for face in Face:
            edge_arrays[f"{sid}.{face.value}"] = np.stack([f[face] for f in frames]) if frames else np.zeros((0, 0, 3))
    np.savez(gt_dir / "tactile_edges.npz", **edge_arrays)
    pose_truth = {}
    for hand in HANDS:
        track = bundle.true_tracks[f"{hand}_pose"]
        pose_truth[f"{hand}_times"] = track.times
        pose_truth[f"{hand}_poses"] = np.stack(
            [np.concatenate([p.translation, p.rotation]) for p in track.poses]
        )
    np.savez(gt_dir / "trajectory.npz", **pose_truth)

    return GroundTruthSidecar(
        latencies=bundle.true_latencies,
        capture_times=bundle.true_capture,
        handeye_x=handeye_x,
        handeye_y=handeye_y,
        widths=widths,
        pose_tracks=bundle.true_tracks,
        tactile_edges=tactile_edges,
        tactile_extrinsics={sid: m.extrinsics for sid, m in models.items()},
        seed=spec.seed,
    )


def builtin_scenario(name: str) -> ScenarioSpec:
    """Named scenarios for the CLI and the test suite."""
    if name == "nominal":
        return ScenarioSpec(duration_s=2.0, seed=0)
    if name == "nominal-lowres":
        return ScenarioSpec(duration_s=2.0, seed=0, tactile_width=320, tactile_height=240)
    if name == "short":
        return ScenarioSpec(duration_s=1.2, seed=1, tactile_width=320, tactile_height=240)
    if name == "jitter":
        specs = default_stream_specs()
        specs = {sid: StreamSpec(s.rate_hz, s.latency, s.phase, 0.003) for sid, s in specs.items()}
        return ScenarioSpec(duration_s=2.0, seed=2, streams=specs, tactile_width=320, tactile_height=240)
    raise ValueError(f"unknown scenario {name!r} (try: nominal, nominal-lowres, short, jitter)")


def load_scenario(path_or_name: str) -> ScenarioSpec:
    """Builtin scenario name or a JSON file with ScenarioSpec overrides."""
    p = Path(path_or_name)
    if not p.exists():
        return builtin_scenario(path_or_name)
    data = json.loads(p.read_text())
    specs = default_stream_specs()
    for sid, overrides in data.pop("streams", {}).items():
        base = specs[sid]
        specs[sid] = StreamSpec(
            rate_hz=overrides.get("rate_hz", base.rate_hz),
            latency=overrides.get("latency", base.latency),
            phase=overrides.get("phase", base.phase),
            jitter=overrides.get("jitter", base.jitter),
        )
    deform = data.pop("deformation", None)
    kwargs = dict(data)
    kwargs["streams"] = specs
    if deform:
        kwargs["deformation"] = DeformationParams(
            amplitudes={Face.LEFT_FACE: deform.get("left", 0.005), Face.RIGHT_FACE: deform.get("right", 0.003)},
            schedule=deform.get("schedule", "sine"),
            period=deform.get("period", 4.0),
        )
    return ScenarioSpec(**kwargs)
