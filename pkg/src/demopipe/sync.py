"""Latency measurement, timestamp correction, and cross-stream alignment.

Every stream records host reception times t_rec. Transmission latency is
measured per modality (handshakes for the pose stream, clock markers for
cameras) and subtracted to recover true capture times. Alignment then
produces one frame per visual sample: tactile frames matched by nearest
corrected timestamp, poses interpolated exactly at the frame time.

Skew bookkeeping is deliberately latency-aware even when compensation is
disabled for alignment: matching can run on raw reception times (the
ablation case), but each frame's skew is always evaluated on capture
times implied by the supplied latency records, so an uncompensated run
reports the misalignment it actually suffers.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .errors import (
    NegativeLatency,
    NoOverlap,
    OutOfRange,
    StreamIdMismatch,
    TooFewDecodable,
    TooFewSamples,
)
from .fiducial import ClockCodebook, MarkerDescriptor, decode_clock
from .errors import NoMarker, UnknownId
from .geometry import Handedness, RigidTransform, quat_slerp

SKEW_THRESHOLD = 0.010  # seconds; frames above are flagged invalid
MIN_HANDSHAKES = 10
MIN_DECODABLE = 10


@dataclass(frozen=True)
class StreamSample:
    t_rec: float
    payload: Any
    stream_id: str


@dataclass(frozen=True)
class LatencyRecord:
    stream_id: str
    t_latency: float
    sample_count: int
    spread: float

    def __post_init__(self):
        if self.t_latency < 0:
            raise NegativeLatency(f"negative latency for {self.stream_id}")
        if self.spread < 0:
            raise ValueError("spread must be non-negative")


@dataclass(frozen=True)
class AlignedFrame:
    t: float                                  # common timebase: visual capture time
    visual: tuple[Any, ...]                   # payloads, reference stream first
    tactile: tuple[Any, ...]
    poses: tuple[RigidTransform, ...]
    skew: float
    valid: bool


def validate_stream(stream: Sequence[StreamSample]) -> None:
    for a, b in zip(stream, stream[1:]):
        if b.t_rec < a.t_rec:
            raise ValueError(f"stream {a.stream_id!r} reception times not monotone")


def measure_pose_latency(
    handshake_log: Sequence[tuple[float, float]], stream_id: str = "pose"
) -> LatencyRecord:
    """Median latency from (t_actual, t_rec) handshake pairs."""
    if len(handshake_log) < MIN_HANDSHAKES:
        raise TooFewSamples(f"need >= {MIN_HANDSHAKES} handshake pairs, got {len(handshake_log)}")
    diffs = np.array([t_rec - t_actual for t_actual, t_rec in handshake_log])
    lat = float(np.median(diffs))
    if lat < 0:
        raise NegativeLatency(f"median handshake latency {lat:.4f} s is negative")
    return LatencyRecord(
        stream_id=stream_id,
        t_latency=lat,
        sample_count=len(diffs),
        spread=float(diffs.max() - diffs.min()),
    )


def measure_camera_latency(
    frames: Sequence[StreamSample],
    codebook: ClockCodebook,
    dictionary: list[MarkerDescriptor] | None = None,
    load_image: Callable[[Any], np.ndarray] | None = None,
) -> LatencyRecord:
    """Median of per-frame (t_rec - decoded display time).

    ``load_image`` maps a frame payload to a grayscale array; by default
    payloads are assumed to be arrays already. Frames without a decodable
    codebook marker are skipped.
    """
    if load_image is None:
        load_image = np.asarray
    diffs = []
    stream_id = frames[0].stream_id if frames else "camera"
    for sample in frames:
        try:
            t_actual = decode_clock(load_image(sample.payload), codebook, dictionary)
        except (NoMarker, UnknownId):
            continue
        diffs.append(sample.t_rec - t_actual)
    if len(diffs) < MIN_DECODABLE:
        raise TooFewDecodable(
            f"only {len(diffs)} frames with decodable clock markers (need {MIN_DECODABLE})"
        )
    arr = np.array(diffs)
    lat = float(np.median(arr))
    if lat < 0:
        raise NegativeLatency(f"median camera latency {lat:.4f} s is negative")
    return LatencyRecord(
        stream_id=stream_id,
        t_latency=lat,
        sample_count=len(arr),
        spread=float(arr.max() - arr.min()),
    )


def correct_timestamps(
    stream: Sequence[StreamSample], lat: LatencyRecord
) -> list[StreamSample]:
    """Shift reception times back by the measured latency."""
    out = []
    for s in stream:
        if s.stream_id != lat.stream_id:
            raise StreamIdMismatch(
                f"latency for {lat.stream_id!r} applied to stream {s.stream_id!r}"
            )
        out.append(StreamSample(t_rec=s.t_rec - lat.t_latency, payload=s.payload, stream_id=s.stream_id))
    return out


class PoseTrack:
    """Time-indexed right-handed pose sequence with spherical interpolation."""

    def __init__(self, times: Sequence[float], poses: Sequence[RigidTransform], stream_id: str = ""):
        if len(times) != len(poses) or len(times) == 0:
            raise ValueError("times and poses must be equal-length and non-empty")
        order = np.argsort(times, kind="stable")
        self.times = np.asarray(times, dtype=np.float64)[order]
        self.poses = [poses[i] for i in order]
        self.stream_id = stream_id
        for p in self.poses:
            if p.handedness is not Handedness.RIGHT:
                raise ValueError("pose track requires right-handed poses")

    @staticmethod
    def from_stream(stream: Sequence[StreamSample], stream_id: str | None = None) -> "PoseTrack":
        return PoseTrack(
            [s.t_rec for s in stream],
            [s.payload for s in stream],
            stream_id if stream_id is not None else (stream[0].stream_id if stream else ""),
        )

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def shifted(self, offset: float) -> "PoseTrack":
        track = PoseTrack.__new__(PoseTrack)
        track.times = self.times + offset
        track.poses = self.poses
        track.stream_id = self.stream_id
        return track

    def sample(self, t: float) -> RigidTransform:
        if t < self.times[0] or t > self.times[-1]:
            raise OutOfRange(
                f"t={t:.6f} outside pose coverage [{self.times[0]:.6f}, {self.times[-1]:.6f}]"
            )
        i = int(np.searchsorted(self.times, t))
        if i < len(self.times) and self.times[i] == t:
            return self.poses[i]
        lo, hi = i - 1, i
        alpha = (t - self.times[lo]) / (self.times[hi] - self.times[lo])
        a, b = self.poses[lo], self.poses[hi]
        q = quat_slerp(a.rotation, b.rotation, float(alpha))
        trans = (1.0 - alpha) * a.translation + alpha * b.translation
        return RigidTransform(q, trans, a.handedness)


def interpolate_pose(poses: PoseTrack | Sequence[StreamSample], t: float) -> RigidTransform:
    """Pose at time t: translation lerp, rotation slerp on the shorter arc."""
    track = poses if isinstance(poses, PoseTrack) else PoseTrack.from_stream(poses)
    return track.sample(t)


def _nearest_index(times: np.ndarray, t: float) -> int:
    i = bisect.bisect_left(times, t)
    if i <= 0:
        return 0
    if i >= len(times):
        return len(times) - 1
    return i if times[i] - t < t - times[i - 1] else i - 1


def align_streams(
    visual: Sequence[Sequence[StreamSample]] | Sequence[StreamSample],
    tactile: Sequence[Sequence[StreamSample]],
    poses: Sequence[PoseTrack],
    latencies: dict[str, LatencyRecord],
    compensate: bool = True,
    skew_threshold: float = SKEW_THRESHOLD,
) -> list[AlignedFrame]:
    """One aligned frame per reference visual sample in the common window.

    All streams carry raw reception times; ``latencies`` maps stream ids
    to their records and is applied internally (already-corrected streams
    pass an empty mapping). ``visual`` is one stream or a list of visual
    streams; the first is the reference clock. With ``compensate``
    matching runs on corrected times, otherwise on raw reception times;
    skew is always evaluated on corrected times.
    """
    if visual and isinstance(visual[0], StreamSample):
        visual_streams = [list(visual)]
    else:
        visual_streams = [list(v) for v in visual]
    tactile_streams = [list(ts) for ts in tactile]
    if not visual_streams or not visual_streams[0]:
        raise NoOverlap("empty reference visual stream")

    def lat_of(stream_id: str) -> float:
        rec = latencies.get(stream_id)
        return rec.t_latency if rec else 0.0

    def match_times(stream):
        return np.array([
            s.t_rec - (lat_of(s.stream_id) if compensate else 0.0) for s in stream
        ])

    def true_times(stream):
        return np.array([s.t_rec - lat_of(s.stream_id) for s in stream])

    ref = visual_streams[0]
    ref_match = match_times(ref)
    ref_true = true_times(ref)

    aux_visual = visual_streams[1:]
    aux_match = [match_times(s) for s in aux_visual]
    aux_true = [true_times(s) for s in aux_visual]
    tac_match = [match_times(s) for s in tactile_streams]
    tac_true = [true_times(s) for s in tactile_streams]

    pose_lat = [lat_of(p.stream_id) for p in poses]

    # common coverage on the matching timeline; pose tracks keep raw
    # times, so their corrected coverage shifts back by their latency
    start = ref_match[0]
    end = ref_match[-1]
    for tm in aux_match + tac_match:
        if len(tm) == 0:
            raise NoOverlap("empty stream")
        start = max(start, tm[0])
        end = min(end, tm[-1])
    for p, lp in zip(poses, pose_lat):
        t0 = p.t_start - (lp if compensate else 0.0)
        t1 = p.t_end - (lp if compensate else 0.0)
        start = max(start, t0)
        end = min(end, t1)
    if end <= start:
        raise NoOverlap(f"streams share no common time coverage ({start:.3f} > {end:.3f})")

    frames = []
    for i, q in enumerate(ref_match):
        if q < start or q > end:
            continue
        tau_v = ref_true[i]
        skews = []
        visuals = [ref[i].payload]
        for stream, tm, tt in zip(aux_visual, aux_match, aux_true):
            j = _nearest_index(tm, q)
            visuals.append(stream[j].payload)
            skews.append(abs(tt[j] - tau_v))
        tactiles = []
        for stream, tm, tt in zip(tactile_streams, tac_match, tac_true):
            j = _nearest_index(tm, q)
            tactiles.append(stream[j].payload)
            skews.append(abs(tt[j] - tau_v))
        frame_poses = []
        pose_ok = True
        for p, lp in zip(poses, pose_lat):
            # tracks hold raw reception times; map the matching-time query
            # onto that raw timeline, then express the result's capture time
            q_raw = q + lp if compensate else q
            try:
                pose = p.sample(q_raw)
            except OutOfRange:
                pose_ok = False
                break
            frame_poses.append(pose)
            skews.append(abs((q_raw - lp) - tau_v))
        if not pose_ok:
            continue
        skew = max(skews) if skews else 0.0
        frames.append(
            AlignedFrame(
                t=tau_v,
                visual=tuple(visuals),
                tactile=tuple(tactiles),
                poses=tuple(frame_poses),
                skew=skew,
                valid=skew <= skew_threshold,
            )
        )
    return frames
