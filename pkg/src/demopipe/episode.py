"""Episode container: aligned multimodal frames with actions and clouds.

On disk an episode is a self-describing chunked binary file:

    magic 'DPEP' | u16 version | u16 reserved | u32 header_len
    header: canonical JSON (counts, calibration hash, software version,
            frame record size)
    body:   frame_count fixed-size records, little-endian
    footer: reference table (u32 count, then per entry: u16 path length,
            utf-8 path, 32-byte sha256)

Frame record layout (little-endian, offsets in bytes):

    t f64 | skew f64 | visual ref indices 2 x u32
    per hand (left then right):
        ee pose   tx ty tz qx qy qz qw  (7 x f64)
        delta     tx ty tz qx qy qz qw  (7 x f64)
        width f64 | clamped u8 | 7 pad bytes
    clouds: 4 x 256 x 3 f32  (left0, left1, right0, right1)

Identical episodes serialize to identical bytes; all numeric fields
survive an export/import round trip bit-exactly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import IoFailure, SchemaViolation
from .geometry import (
    Handedness,
    RigidTransform,
    compose,
    invert,
    rotation_geodesic_angle,
)
from .handeye import GripperState, MAX_GRIPPER_WIDTH
from .sync import SKEW_THRESHOLD
from .tactile import CLOUD_POINTS, TactilePointCloud

MAGIC = b"DPEP"
FORMAT_VERSION = 1
HANDS = ("left", "right")
CLOUDS_PER_FRAME = 4
DELTA_CHAIN_TOL = 1e-9

_POSE_FMT = "<7d"
_RECORD_HEAD_FMT = "<dd2I"
_HAND_TAIL_FMT = "<dB7x"
FRAME_RECORD_SIZE = (
    struct.calcsize(_RECORD_HEAD_FMT)
    + 2 * (2 * struct.calcsize(_POSE_FMT) + struct.calcsize(_HAND_TAIL_FMT))
    + CLOUDS_PER_FRAME * CLOUD_POINTS * 3 * 4
)


@dataclass(frozen=True)
class FrameRef:
    """Visual frame stored by reference: relative path plus content hash."""

    path: str
    sha256: bytes = b"\x00" * 32

    def __post_init__(self):
        if len(self.sha256) != 32:
            raise ValueError("sha256 must be 32 bytes")


@dataclass(frozen=True)
class EpisodeFrame:
    t: float
    skew: float
    visual_refs: tuple[FrameRef, FrameRef]
    ee_poses: tuple[RigidTransform, RigidTransform]
    deltas: tuple[RigidTransform, RigidTransform]
    grippers: tuple[GripperState, GripperState]
    clouds: tuple[TactilePointCloud, TactilePointCloud, TactilePointCloud, TactilePointCloud]


@dataclass
class Episode:
    frames: list[EpisodeFrame]
    calibration_sha256: str = ""
    software_version: str = __version__

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("an episode needs at least 2 frames")
        ts = [f.t for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("frame timestamps must be strictly increasing")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    metrics: dict[str, float] = field(default_factory=dict)


@dataclass
class ValidationReport:
    """Machine-readable validation outcome with a stable field set."""

    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, **metrics: float) -> None:
        self.checks.append(CheckResult(name=name, passed=bool(passed), metrics=metrics))

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self) -> str:
        payload = {
            "version": FORMAT_VERSION,
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "metrics": c.metrics}
                for c in self.checks
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def _pack_pose(t: RigidTransform) -> bytes:
    return struct.pack(_POSE_FMT, *t.translation, *t.rotation)


def _unpack_pose(buf: bytes) -> RigidTransform:
    vals = struct.unpack(_POSE_FMT, buf)
    return RigidTransform(np.array(vals[3:]), np.array(vals[:3]))


def export_episode(ep: Episode, path) -> None:
    """Serialize; byte-identical output for identical episodes."""
    refs: list[FrameRef] = []
    ref_index: dict[tuple[str, bytes], int] = {}

    def ref_id(ref: FrameRef) -> int:
        key = (ref.path, ref.sha256)
        if key not in ref_index:
            ref_index[key] = len(refs)
            refs.append(ref)
        return ref_index[key]

    records = []
    for f in ep.frames:
        chunks = [struct.pack(_RECORD_HEAD_FMT, f.t, f.skew, ref_id(f.visual_refs[0]), ref_id(f.visual_refs[1]))]
        for hand in range(2):
            chunks.append(_pack_pose(f.ee_poses[hand]))
            chunks.append(_pack_pose(f.deltas[hand]))
            chunks.append(struct.pack(_HAND_TAIL_FMT, f.grippers[hand].width, int(f.grippers[hand].clamped)))
        for cloud in f.clouds:
            chunks.append(np.ascontiguousarray(cloud.points, dtype="<f4").tobytes())
        rec = b"".join(chunks)
        if len(rec) != FRAME_RECORD_SIZE:
            raise IoFailure(f"frame record size {len(rec)} != {FRAME_RECORD_SIZE}")
        records.append(rec)

    header = {
        "calibration_sha256": ep.calibration_sha256,
        "cloud_points": CLOUD_POINTS,
        "clouds_per_frame": CLOUDS_PER_FRAME,
        "frame_count": len(ep.frames),
        "frame_record_size": FRAME_RECORD_SIZE,
        "hands": list(HANDS),
        "software_version": ep.software_version,
        "version": FORMAT_VERSION,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()

    footer = [struct.pack("<I", len(refs))]
    for ref in refs:
        pb = ref.path.encode()
        footer.append(struct.pack("<H", len(pb)) + pb + ref.sha256)

    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<HHI", FORMAT_VERSION, 0, len(header_bytes)))
            fh.write(header_bytes)
            for rec in records:
                fh.write(rec)
            for chunk in footer:
                fh.write(chunk)
    except OSError as e:
        raise IoFailure(f"cannot write episode: {e}") from e


def import_episode(path) -> Episode:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise IoFailure(f"cannot read episode: {e}") from e
    if blob[:4] != MAGIC:
        raise SchemaViolation("not an episode container", path=str(path))
    version, _, hlen = struct.unpack_from("<HHI", blob, 4)
    if version != FORMAT_VERSION:
        raise SchemaViolation(f"unsupported container version {version}", path=str(path))
    off = 12
    header = json.loads(blob[off:off + hlen].decode())
    off += hlen
    n = header["frame_count"]
    rec_size = header["frame_record_size"]
    if rec_size != FRAME_RECORD_SIZE:
        raise SchemaViolation("frame record size mismatch", path=str(path))

    records = blob[off:off + n * rec_size]
    off += n * rec_size
    (ref_count,) = struct.unpack_from("<I", blob, off)
    off += 4
    refs = []
    for _ in range(ref_count):
        (plen,) = struct.unpack_from("<H", blob, off)
        off += 2
        p = blob[off:off + plen].decode()
        off += plen
        digest = blob[off:off + 32]
        off += 32
        refs.append(FrameRef(path=p, sha256=digest))

    frames = []
    pose_size = struct.calcsize(_POSE_FMT)
    tail_size = struct.calcsize(_HAND_TAIL_FMT)
    for i in range(n):
        rec = records[i * rec_size:(i + 1) * rec_size]
        t, skew, r0, r1 = struct.unpack_from(_RECORD_HEAD_FMT, rec, 0)
        pos = struct.calcsize(_RECORD_HEAD_FMT)
        poses, deltas, grips = [], [], []
        for _hand in range(2):
            poses.append(_unpack_pose(rec[pos:pos + pose_size]))
            pos += pose_size
            deltas.append(_unpack_pose(rec[pos:pos + pose_size]))
            pos += pose_size
            width, clamped = struct.unpack_from(_HAND_TAIL_FMT, rec, pos)
            pos += tail_size
            grips.append(GripperState(width=width, clamped=bool(clamped)))
        clouds = []
        for _c in range(CLOUDS_PER_FRAME):
            pts = np.frombuffer(rec, dtype="<f4", count=CLOUD_POINTS * 3, offset=pos).reshape(CLOUD_POINTS, 3)
            pos += CLOUD_POINTS * 3 * 4
            clouds.append(TactilePointCloud(points=pts.copy(), timestamp=t))
        frames.append(
            EpisodeFrame(
                t=t,
                skew=skew,
                visual_refs=(refs[r0], refs[r1]),
                ee_poses=tuple(poses),
                deltas=tuple(deltas),
                grippers=tuple(grips),
                clouds=tuple(clouds),
            )
        )
    return Episode(
        frames=frames,
        calibration_sha256=header["calibration_sha256"],
        software_version=header["software_version"],
    )


def validate_episode(ep: Episode, skew_threshold: float = SKEW_THRESHOLD) -> ValidationReport:
    """Every module invariant expressible on the stored data, deterministically."""
    report = ValidationReport()

    ts = np.array([f.t for f in ep.frames])
    report.add(
        "frame_count", len(ep.frames) >= 2, count=float(len(ep.frames))
    )
    report.add(
        "timestamps_increasing", bool(np.all(np.diff(ts) > 0)), span=float(ts[-1] - ts[0])
    )

    skews = np.array([f.skew for f in ep.frames])
    report.add(
        "skew_within_threshold",
        bool(np.all(skews <= skew_threshold)),
        max=float(skews.max()),
        mean=float(skews.mean()),
        p95=float(np.percentile(skews, 95)),
        threshold=skew_threshold,
        over_threshold=float(np.sum(skews > skew_threshold)),
    )

    norm_ok = True
    for f in ep.frames:
        for t in list(f.ee_poses) + list(f.deltas):
            if abs(np.linalg.norm(t.rotation) - 1.0) > 1e-9:
                norm_ok = False
    report.add("quaternion_norms", norm_ok)

    # delta chain: frame 0 identity, each delta consistent with its pose
    # pair, and the full composition reproducing the endpoint relative pose
    chain_rot_err = 0.0
    chain_trans_err = 0.0
    ident = RigidTransform.identity()
    for hand in range(2):
        d0 = ep.frames[0].deltas[hand]
        chain_rot_err = max(chain_rot_err, rotation_geodesic_angle(d0.rotation_matrix, ident.rotation_matrix))
        chain_trans_err = max(chain_trans_err, float(np.linalg.norm(d0.translation)))
        running = None
        for i in range(1, len(ep.frames)):
            expected = compose(invert(ep.frames[i].ee_poses[hand]), ep.frames[i - 1].ee_poses[hand])
            got = ep.frames[i].deltas[hand]
            chain_rot_err = max(
                chain_rot_err, rotation_geodesic_angle(expected.rotation_matrix, got.rotation_matrix)
            )
            chain_trans_err = max(
                chain_trans_err, float(np.linalg.norm(expected.translation - got.translation))
            )
            running = got if running is None else compose(running, got)
        if running is not None:
            endpoint = compose(invert(ep.frames[-1].ee_poses[hand]), ep.frames[0].ee_poses[hand])
            chain_rot_err = max(
                chain_rot_err, rotation_geodesic_angle(running.rotation_matrix, endpoint.rotation_matrix)
            )
            chain_trans_err = max(
                chain_trans_err, float(np.linalg.norm(running.translation - endpoint.translation))
            )
    report.add(
        "delta_chain",
        chain_rot_err <= DELTA_CHAIN_TOL and chain_trans_err <= DELTA_CHAIN_TOL,
        rot_err=chain_rot_err,
        trans_err=chain_trans_err,
        tol=DELTA_CHAIN_TOL,
    )

    widths = np.array([[g.width for g in f.grippers] for f in ep.frames])
    clamped = np.array([[g.clamped for g in f.grippers] for f in ep.frames])
    report.add(
        "gripper_widths",
        bool(np.all((widths >= 0) & (widths <= MAX_GRIPPER_WIDTH))),
        min=float(widths.min()),
        max=float(widths.max()),
        clamp_rate=float(clamped.mean()),
    )

    cloud_ok = all(
        c.points.shape == (CLOUD_POINTS, 3) and bool(np.all(np.isfinite(c.points)))
        for f in ep.frames
        for c in f.clouds
    )
    report.add("clouds_well_formed", cloud_ok, per_frame=float(CLOUDS_PER_FRAME))
    return report
