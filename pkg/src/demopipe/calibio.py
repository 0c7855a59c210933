"""Plain-text calibration file shared by every CLI stage.

One flat key-value file accumulates everything process needs: camera
intrinsics, per-sensor geometry, per-stream latency records, per-device
hand-eye results, and marker configuration. Keys are dotted paths;
values are scalars or whitespace-separated number lists. Floats are
written with repr so a save/load round trip is bit-exact, and keys are
written sorted so identical content yields identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import SchemaViolation
from .fiducial import MarkerDescriptor
from .geometry import CameraIntrinsics, Plane, RigidTransform
from .handeye import HandEyeResult
from .sync import LatencyRecord
from .tactile import Face, SensorGeometry

FORMAT_VERSION = 1


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(_fmt(v) for v in np.asarray(value).ravel())
    return str(value)


def save_kv(path, entries: dict[str, str]) -> None:
    lines = [f"# demopipe calibration v{FORMAT_VERSION}"]
    for key in sorted(entries):
        lines.append(f"{key} = {entries[key]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_kv(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    p = Path(path)
    if not p.exists():
        raise SchemaViolation("calibration file not found", path=str(path))
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SchemaViolation("expected 'key = value'", path=str(path), line=lineno)
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries


class CalibrationFile:
    """Typed accessors over the flat key-value store."""

    def __init__(self, entries: dict[str, str] | None = None):
        self.entries: dict[str, str] = dict(entries or {})

    @staticmethod
    def load(path) -> "CalibrationFile":
        return CalibrationFile(load_kv(path))

    def save(self, path) -> None:
        save_kv(path, self.entries)

    def merge_from(self, other: "CalibrationFile") -> None:
        self.entries.update(other.entries)

    # -- raw helpers ---------------------------------------------------------

    def _floats(self, key: str) -> list[float]:
        try:
            return [float(tok) for tok in self.entries[key].split()]
        except KeyError:
            raise SchemaViolation(f"missing calibration key {key!r}")
        except ValueError:
            raise SchemaViolation(f"non-numeric value for {key!r}")

    def _float(self, key: str) -> float:
        vals = self._floats(key)
        if len(vals) != 1:
            raise SchemaViolation(f"expected one number for {key!r}")
        return vals[0]

    def _set(self, key: str, value) -> None:
        self.entries[key] = _fmt(value)

    def has(self, prefix: str) -> bool:
        return any(k == prefix or k.startswith(prefix + ".") for k in self.entries)

    # -- intrinsics ----------------------------------------------------------

    def set_intrinsics(self, stream_id: str, k: CameraIntrinsics) -> None:
        base = f"intrinsics.{stream_id}"
        self._set(f"{base}.fx", k.fx)
        self._set(f"{base}.fy", k.fy)
        self._set(f"{base}.cx", k.cx)
        self._set(f"{base}.cy", k.cy)
        self._set(f"{base}.width", k.width)
        self._set(f"{base}.height", k.height)

    def intrinsics(self, stream_id: str) -> CameraIntrinsics:
        base = f"intrinsics.{stream_id}"
        return CameraIntrinsics(
            fx=self._float(f"{base}.fx"),
            fy=self._float(f"{base}.fy"),
            cx=self._float(f"{base}.cx"),
            cy=self._float(f"{base}.cy"),
            width=int(self._float(f"{base}.width")),
            height=int(self._float(f"{base}.height")),
        )

    # -- latency -------------------------------------------------------------

    def set_latency(self, rec: LatencyRecord) -> None:
        base = f"latency.{rec.stream_id}"
        self._set(f"{base}.t_latency", rec.t_latency)
        self._set(f"{base}.sample_count", rec.sample_count)
        self._set(f"{base}.spread", rec.spread)

    def latency(self, stream_id: str) -> LatencyRecord:
        base = f"latency.{stream_id}"
        return LatencyRecord(
            stream_id=stream_id,
            t_latency=self._float(f"{base}.t_latency"),
            sample_count=int(self._float(f"{base}.sample_count")),
            spread=self._float(f"{base}.spread"),
        )

    def latencies(self) -> dict[str, LatencyRecord]:
        ids = {k.split(".")[1] for k in self.entries if k.startswith("latency.")}
        return {sid: self.latency(sid) for sid in sorted(ids)}

    # -- transforms ----------------------------------------------------------

    def _set_transform(self, key: str, t: RigidTransform) -> None:
        self._set(key, list(t.translation) + list(t.rotation))

    def _transform(self, key: str) -> RigidTransform:
        vals = self._floats(key)
        if len(vals) != 7:
            raise SchemaViolation(f"expected 'tx ty tz qx qy qz qw' for {key!r}")
        return RigidTransform(np.array(vals[3:]), np.array(vals[:3]))

    # -- hand-eye ------------------------------------------------------------

    def set_handeye(self, device_id: str, result: HandEyeResult) -> None:
        base = f"handeye.{device_id}"
        self._set_transform(f"{base}.x", result.x)
        self._set_transform(f"{base}.y", result.y)
        self._set(f"{base}.residual_rot_deg", result.residual_rot)
        self._set(f"{base}.residual_trans_m", result.residual_trans)

    def handeye(self, device_id: str) -> HandEyeResult:
        base = f"handeye.{device_id}"
        return HandEyeResult(
            x=self._transform(f"{base}.x"),
            y=self._transform(f"{base}.y"),
            residual_rot=self._float(f"{base}.residual_rot_deg"),
            residual_trans=self._float(f"{base}.residual_trans_m"),
        )

    # -- sensor geometry -------------------------------------------------------

    def set_sensor_geometry(self, sensor_id: str, geom: SensorGeometry) -> None:
        base = f"sensor.{sensor_id}"
        self._set(f"{base}.cad_corners", geom.cad_corners)
        self._set(f"{base}.corners_coplanar", geom.corners_coplanar)
        for face in Face:
            plane = geom.edge_planes[face]
            self._set(f"{base}.edge_plane.{face.value}", list(plane.normal) + [plane.offset])
            self._set(f"{base}.rest_edge.{face.value}", geom.cad_rest_edges[face])

    def sensor_geometry(self, sensor_id: str) -> SensorGeometry:
        base = f"sensor.{sensor_id}"
        corners = np.array(self._floats(f"{base}.cad_corners")).reshape(4, 3)
        planes, rests = {}, {}
        for face in Face:
            vals = self._floats(f"{base}.edge_plane.{face.value}")
            planes[face] = Plane(np.array(vals[:3]), vals[3])
            rests[face] = np.array(self._floats(f"{base}.rest_edge.{face.value}")).reshape(-1, 3)
        coplanar = self.entries.get(f"{base}.corners_coplanar", "true") == "true"
        return SensorGeometry(
            cad_corners=corners,
            edge_planes=planes,
            cad_rest_edges=rests,
            corners_coplanar=coplanar,
        )

    def sensor_ids(self) -> list[str]:
        return sorted({k.split(".")[1] for k in self.entries if k.startswith("sensor.")})

    # -- marker / gripper configuration ---------------------------------------

    def set_marker_config(self, hand: str, finger_ids: tuple[int, int], size: float, zero_offset: float) -> None:
        self._set(f"markers.{hand}.finger_ids", list(finger_ids))
        self._set(f"markers.{hand}.size", size)
        self._set(f"gripper.{hand}.zero_offset", zero_offset)

    def marker_config(self, hand: str) -> tuple[tuple[int, int], float, float]:
        ids = [int(v) for v in self._floats(f"markers.{hand}.finger_ids")]
        size = self._float(f"markers.{hand}.size")
        zero = self._float(f"gripper.{hand}.zero_offset")
        return (ids[0], ids[1]), size, zero
