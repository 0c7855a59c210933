"""Recording ingestion and episode processing.

A raw session directory looks like:

    session/
      hands/{left,right}/{visual,tactile0,tactile1}/frame_*.png
      hands/{left,right}/{visual,tactile0,tactile1}/index.txt   # "file t_rec"
      hands/{left,right}/poses.log      # "t_rec tx ty tz qx qy qz qw" (left-handed)
      pedal.log                         # "start t" / "stop t" lines
      sync/<stream>/frame_*.png + index.txt, sync/<stream>_codebook.txt,
      sync/handshake_{left,right}.log   # latency measurement phase

Processing: handedness conversion -> timestamp correction -> alignment ->
per-frame tactile reconstruction -> EE deltas and gripper widths ->
validated Episode. Frames whose skew exceeds the window are dropped; an
episode with more than MAX_INVALID_FRACTION dropped frames is rejected
(the validation report still comes back attached to the rejection).
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .calibio import CalibrationFile
from .episode import Episode, EpisodeFrame, FrameRef, ValidationReport, validate_episode
from .errors import (
    EmptyRecording,
    EpisodeRejected,
    MissingStream,
    NoMarker,
    SchemaViolation,
    StageError,
    TooShort,
    UnknownId,
)
from .fiducial import ClockCodebook, default_dictionary, detect_markers, estimate_marker_pose
from .geometry import Handedness, RigidTransform, compose, invert, lh_to_rh
from .handeye import GripperState, controller_to_ee, gripper_width
from .sync import (
    LatencyRecord,
    PoseTrack,
    SKEW_THRESHOLD,
    StreamSample,
    align_streams,
    measure_camera_latency,
    measure_pose_latency,
)
from .tactile import reconstruct_frame

logger = logging.getLogger(__name__)

HANDS = ("left", "right")
TACTILE_PER_HAND = 2
MAX_INVALID_FRACTION = 0.05


@dataclass(frozen=True)
class FrameEntry:
    path: Path          # absolute
    rel_path: str       # relative to the session root
    t_rec: float

    def load(self) -> np.ndarray:
        return np.asarray(Image.open(self.path).convert("L"))

    def ref(self) -> FrameRef:
        digest = hashlib.sha256(self.path.read_bytes()).digest()
        return FrameRef(path=self.rel_path, sha256=digest)


@dataclass
class RawRecording:
    """Lazily indexed session directory."""

    root: Path
    camera_streams: dict[str, list[FrameEntry]]
    pose_streams: dict[str, list[StreamSample]]          # left-handed payloads
    pedal_events: list[tuple[str, float]]
    sync_streams: dict[str, list[FrameEntry]] = field(default_factory=dict)
    sync_codebooks: dict[str, ClockCodebook] = field(default_factory=dict)
    handshakes: dict[str, list[tuple[float, float]]] = field(default_factory=dict)

    def pedal_window(self) -> tuple[float, float]:
        starts = [t for kind, t in self.pedal_events if kind == "start"]
        stops = [t for kind, t in self.pedal_events if kind == "stop"]
        if not starts or not stops:
            raise SchemaViolation("pedal log lacks a start/stop pair", path=str(self.root / "pedal.log"))
        return starts[0], stops[0]


def _read_index(stream_dir: Path, root: Path) -> list[FrameEntry]:
    index = stream_dir / "index.txt"
    if not index.exists():
        raise MissingStream(f"no index.txt under {stream_dir}")
    entries = []
    for lineno, line in enumerate(index.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise SchemaViolation("expected 'file t_rec'", path=str(index), line=lineno)
        name, t_rec = parts
        fpath = stream_dir / name
        if not fpath.exists():
            raise SchemaViolation(f"frame file {name} missing", path=str(index), line=lineno)
        try:
            t = float(t_rec)
        except ValueError:
            raise SchemaViolation(f"bad timestamp {t_rec!r}", path=str(index), line=lineno)
        entries.append(FrameEntry(path=fpath, rel_path=str(fpath.relative_to(root)), t_rec=t))
    if any(b.t_rec < a.t_rec for a, b in zip(entries, entries[1:])):
        raise SchemaViolation("reception times not monotone", path=str(index))
    return entries


def _read_poses(path: Path, stream_id: str) -> list[StreamSample]:
    if not path.exists():
        raise MissingStream(f"missing pose log {path}")
    samples = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = line.split()
        if len(vals) != 8:
            raise SchemaViolation("expected 't_rec tx ty tz qx qy qz qw'", path=str(path), line=lineno)
        try:
            nums = [float(v) for v in vals]
        except ValueError:
            raise SchemaViolation("non-numeric pose entry", path=str(path), line=lineno)
        pose = RigidTransform(np.array(nums[4:]), np.array(nums[1:4]), Handedness.LEFT)
        samples.append(StreamSample(t_rec=nums[0], payload=pose, stream_id=stream_id))
    return samples


def ingest_recording(path) -> RawRecording:
    """Load a session directory, validating the documented layout."""
    root = Path(path)
    if not root.is_dir():
        raise EmptyRecording(f"{path} is not a directory")
    if not any(root.iterdir()):
        raise EmptyRecording(f"{path} is empty")
    hands_dir = root / "hands"
    if not hands_dir.is_dir():
        raise MissingStream("no hands/ directory")

    camera_streams: dict[str, list[FrameEntry]] = {}
    pose_streams: dict[str, list[StreamSample]] = {}
    for hand in HANDS:
        hdir = hands_dir / hand
        for cam in ["visual"] + [f"tactile{i}" for i in range(TACTILE_PER_HAND)]:
            sdir = hdir / cam
            sid = f"{hand}_{cam}"
            if not sdir.is_dir():
                raise MissingStream(f"missing camera stream {sid}")
            camera_streams[sid] = _read_index(sdir, root)
        pose_streams[f"{hand}_pose"] = _read_poses(hdir / "poses.log", f"{hand}_pose")
    if all(len(v) == 0 for v in camera_streams.values()):
        raise EmptyRecording("all camera streams are empty")

    pedal_path = root / "pedal.log"
    pedal = []
    if pedal_path.exists():
        for lineno, line in enumerate(pedal_path.read_text().splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            kind, _, value = line.partition(" ")
            if kind not in ("start", "stop"):
                raise SchemaViolation(f"unknown pedal event {kind!r}", path=str(pedal_path), line=lineno)
            pedal.append((kind, float(value)))
        kinds = [k for k, _ in pedal]
        if kinds and (kinds[0] != "start" or len([k for k in kinds if k == "start"]) != len(
            [k for k in kinds if k == "stop"]
        )):
            raise SchemaViolation("pedal events not properly paired", path=str(pedal_path))

    sync_streams: dict[str, list[FrameEntry]] = {}
    sync_codebooks: dict[str, ClockCodebook] = {}
    handshakes: dict[str, list[tuple[float, float]]] = {}
    sync_dir = root / "sync"
    if sync_dir.is_dir():
        for sid in camera_streams:
            sdir = sync_dir / sid
            cb = sync_dir / f"{sid}_codebook.txt"
            if sdir.is_dir() and cb.exists():
                sync_streams[sid] = _read_index(sdir, root)
                table = {}
                for line in cb.read_text().splitlines():
                    line = line.strip()
                    if not line:
                        continue
                    mid, t = line.split()
                    table[int(mid)] = float(t)
                sync_codebooks[sid] = ClockCodebook(times=table)
        for hand in HANDS:
            hs = sync_dir / f"handshake_{hand}.log"
            if hs.exists():
                pairs = []
                for line in hs.read_text().splitlines():
                    line = line.strip()
                    if not line:
                        continue
                    ta, tr = line.split()
                    pairs.append((float(ta), float(tr)))
                handshakes[f"{hand}_pose"] = pairs

    return RawRecording(
        root=root,
        camera_streams=camera_streams,
        pose_streams=pose_streams,
        pedal_events=pedal,
        sync_streams=sync_streams,
        sync_codebooks=sync_codebooks,
        handshakes=handshakes,
    )


def measure_session_latencies(raw: RawRecording) -> dict[str, LatencyRecord]:
    """Latency records from the session's sync phase."""
    records: dict[str, LatencyRecord] = {}
    for sid, pairs in raw.handshakes.items():
        records[sid] = measure_pose_latency(pairs, stream_id=sid)
    dictionary = default_dictionary()
    for sid, entries in raw.sync_streams.items():
        frames = [StreamSample(t_rec=e.t_rec, payload=e, stream_id=sid) for e in entries]
        records[sid] = measure_camera_latency(
            frames, raw.sync_codebooks[sid], dictionary, load_image=lambda e: e.load()
        )
    return records


def _hand_widths(
    img: np.ndarray,
    finger_ids: tuple[int, int],
    size: float,
    zero_offset: float,
    k,
    dictionary,
    last: GripperState | None,
) -> tuple[GripperState, bool]:
    """Width from the two finger markers; falls back to the last state."""
    dets = {d.id: d for d in detect_markers(img, dictionary)}
    if finger_ids[0] in dets and finger_ids[1] in dets:
        pose_a = estimate_marker_pose(dets[finger_ids[0]], size, k)
        pose_b = estimate_marker_pose(dets[finger_ids[1]], size, k)
        return gripper_width(pose_a, pose_b, zero_offset), False
    return (last if last is not None else GripperState(width=0.0, clamped=False)), True


def process_episode(
    raw: RawRecording,
    calib: CalibrationFile,
    compensate_latency: bool = True,
    skew_threshold: float = SKEW_THRESHOLD,
) -> tuple[Episode, ValidationReport]:
    """Full processing per the module pipeline (see module docstring)."""
    dictionary = default_dictionary()

    def staged(stage, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as e:
            raise StageError(stage, e) from e

    latencies = calib.latencies()

    # handedness conversion on raw pose timelines
    tracks = []
    for hand in HANDS:
        sid = f"{hand}_pose"
        stream = raw.pose_streams[sid]
        if len(stream) < 2:
            raise TooShort(f"pose stream {sid} has {len(stream)} samples")
        rh = [
            StreamSample(t_rec=s.t_rec, payload=staged("handedness", lh_to_rh, s.payload), stream_id=sid)
            for s in stream
        ]
        tracks.append(PoseTrack.from_stream(rh))

    # pedal-windowed camera streams
    t0, t1 = raw.pedal_window()
    def windowed(sid):
        return [
            StreamSample(t_rec=e.t_rec, payload=e, stream_id=sid)
            for e in raw.camera_streams[sid]
            if t0 <= e.t_rec <= t1
        ]

    visual = [windowed(f"{hand}_visual") for hand in HANDS]
    tactile_ids = [f"{hand}_tactile{i}" for hand in HANDS for i in range(TACTILE_PER_HAND)]
    tactile = [windowed(sid) for sid in tactile_ids]
    for sid, stream in zip(["left_visual", "right_visual"], visual):
        if len(stream) < 2:
            raise TooShort(f"{sid} has {len(stream)} frames inside the pedal window")

    frames = staged(
        "align",
        align_streams,
        visual,
        tactile,
        tracks,
        latencies,
        compensate=compensate_latency,
        skew_threshold=skew_threshold,
    )
    if len(frames) < 2:
        raise TooShort(f"only {len(frames)} aligned frames")
    n_invalid = sum(1 for f in frames if not f.valid)
    invalid_fraction = n_invalid / len(frames)
    skews = np.array([f.skew for f in frames])

    report = ValidationReport()
    report.add(
        "alignment",
        invalid_fraction <= MAX_INVALID_FRACTION,
        frames=float(len(frames)),
        dropped=float(n_invalid),
        invalid_fraction=float(invalid_fraction),
        skew_max=float(skews.max()),
        skew_mean=float(skews.mean()),
        skew_p95=float(np.percentile(skews, 95)),
    )
    if invalid_fraction > MAX_INVALID_FRACTION:
        raise EpisodeRejected(
            f"{n_invalid}/{len(frames)} frames exceed the {skew_threshold * 1e3:.0f} ms window",
            report=report,
        )

    valid_frames = [f for f in frames if f.valid]
    handeyes = {hand: calib.handeye(hand).x for hand in HANDS}
    sensor_geoms = {sid: calib.sensor_geometry(sid) for sid in tactile_ids}
    sensor_intr = {sid: calib.intrinsics(sid) for sid in tactile_ids}
    vis_intr = {hand: calib.intrinsics(f"{hand}_visual") for hand in HANDS}
    marker_cfg = {hand: calib.marker_config(hand) for hand in HANDS}

    episode_frames: list[EpisodeFrame] = []
    prev_ee: dict[str, RigidTransform] = {}
    last_grip: dict[str, GripperState | None] = {hand: None for hand in HANDS}
    width_fallbacks = 0

    for f in valid_frames:
        ee_poses, grips, refs = [], [], []
        for hi, hand in enumerate(HANDS):
            ee_poses.append(staged("handeye", controller_to_ee, f.poses[hi], handeyes[hand]))
            entry: FrameEntry = f.visual[hi]
            refs.append(entry.ref())
            ids, size, zero = marker_cfg[hand]
            grip, fell_back = staged(
                "gripper_width",
                _hand_widths,
                entry.load(),
                ids,
                size,
                zero,
                vis_intr[hand],
                dictionary,
                last_grip[hand],
            )
            width_fallbacks += int(fell_back)
            last_grip[hand] = grip
            grips.append(grip)
        clouds = []
        for ti, sid in enumerate(tactile_ids):
            entry = f.tactile[ti]
            cloud = staged(
                "tactile_reconstruction",
                reconstruct_frame,
                entry.load(),
                sensor_geoms[sid],
                sensor_intr[sid],
                source_sensor=sid,
                timestamp=f.t,
            )
            clouds.append(cloud)
        deltas = []
        for hi, hand in enumerate(HANDS):
            if hand in prev_ee:
                deltas.append(compose(invert(ee_poses[hi]), prev_ee[hand]))
            else:
                deltas.append(RigidTransform.identity())
            prev_ee[hand] = ee_poses[hi]
        episode_frames.append(
            EpisodeFrame(
                t=f.t,
                skew=f.skew,
                visual_refs=tuple(refs),
                ee_poses=tuple(ee_poses),
                deltas=tuple(deltas),
                grippers=tuple(grips),
                clouds=tuple(clouds),
            )
        )

    episode = Episode(frames=episode_frames, calibration_sha256=calibration_hash(calib))
    report.add("width_fallbacks", width_fallbacks == 0, count=float(width_fallbacks))
    for check in validate_episode(episode, skew_threshold).checks:
        report.checks.append(check)
    return episode, report


def calibration_hash(calib: CalibrationFile) -> str:
    payload = "\n".join(f"{k} = {calib.entries[k]}" for k in sorted(calib.entries))
    return hashlib.sha256(payload.encode()).hexdigest()
