"""SE(3) transforms, handedness conversion, and pinhole camera geometry.

Conventions used throughout the package:

  Camera frame (right-handed, computer-vision standard):
    X right in the image, Y down in the image, Z forward along the
    optical axis. Pixel u grows with X, v grows with Y.

  Quaternions are stored (x, y, z, w), unit norm, with w >= 0 so that two
  equal rotations compare equal component-wise.

  A RigidTransform maps points from its "source" frame into its "target"
  frame: p_target = R @ p_source + t. compose(a, b) applies b first.

  Tracking devices report left-handed frames; they are converted to
  right-handed ones by conjugating the 4x4 matrix with a mirror across
  the axis given by HANDEDNESS_MIRROR_AXIS before any robot math runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import (
    AlreadyRightHanded,
    BehindCamera,
    HandednessMismatch,
    PointBehindCamera,
    RayParallelToPlane,
)

# Axis mirrored when converting between left- and right-handed frames.
# Only consistency matters for downstream relative deltas, not the axis
# itself; 2 mirrors z.
HANDEDNESS_MIRROR_AXIS = 2

# Ray/plane denominators below this are treated as parallel.
RAY_PLANE_EPS = 1e-8

_QUAT_NORM_TOL = 1e-9


class Handedness(Enum):
    LEFT = "left"
    RIGHT = "right"


class Pixel(NamedTuple):
    u: float
    v: float


class Point3(NamedTuple):
    x: float
    y: float
    z: float


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


# --- quaternion helpers (x, y, z, w) -----------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Unit-normalize and resolve the double cover (w >= 0).

    Quaternions already unit to within 1e-12 pass through undivided so
    that serialization round trips stay bit-exact.
    """
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("quaternion has zero or non-finite norm")
    if abs(n - 1.0) > 1e-12:
        q = q / n
    if q[3] < 0.0 or (q[3] == 0.0 and _first_nonzero_sign(q[:3]) < 0.0):
        q = -q
    return q


def _first_nonzero_sign(v: np.ndarray) -> float:
    for x in v:
        if x != 0.0:
            return math.copysign(1.0, x)
    return 1.0


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    x1, y1, z1, w1 = q1
    x2, y2, z2, w2 = q2
    return np.array([
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix to quaternion, Shepperd's branch selection."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        x = 0.25 * s
        w = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        y = 0.25 * s
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        z = 0.25 * s
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
    return quat_normalize(np.array([x, y, z, w]))


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("zero rotation axis")
    half = 0.5 * angle
    return quat_normalize(np.concatenate([axis / n * math.sin(half), [math.cos(half)]]))


def quat_angle(q: np.ndarray) -> float:
    """Geodesic rotation angle in radians, in [0, pi]."""
    w = min(1.0, abs(float(q[3])))
    return 2.0 * math.acos(w)


def quat_slerp(q0: np.ndarray, q1: np.ndarray, alpha: float) -> np.ndarray:
    """Spherical interpolation along the shorter arc."""
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    dot = min(dot, 1.0)
    theta = math.acos(dot)
    if theta < 1e-10:
        # nearly identical rotations: nlerp is exact to first order
        return quat_normalize(q0 + alpha * (q1 - q0))
    s = math.sin(theta)
    a = math.sin((1.0 - alpha) * theta) / s
    b = math.sin(alpha * theta) / s
    return quat_normalize(a * q0 + b * q1)


def rotation_geodesic_angle(r1: np.ndarray, r2: np.ndarray) -> float:
    """Angle of the relative rotation between two rotation matrices, rad."""
    c = 0.5 * (np.trace(r1.T @ r2) - 1.0)
    return math.acos(min(1.0, max(-1.0, c)))


# --- rigid transforms ---------------------------------------------------------

@dataclass(frozen=True)
class RigidTransform:
    """SE(3) pose with an explicit handedness tag.

    rotation: unit quaternion (x, y, z, w); translation: meters.
    """

    rotation: np.ndarray
    translation: np.ndarray
    handedness: Handedness = Handedness.RIGHT

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} too far from 1")
        object.__setattr__(self, "rotation", _readonly(quat_normalize(q)))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite translation")
        object.__setattr__(self, "translation", _readonly(t))

    @staticmethod
    def identity(handedness: Handedness = Handedness.RIGHT) -> "RigidTransform":
        return RigidTransform(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3), handedness)

    @staticmethod
    def from_matrix(m: np.ndarray, handedness: Handedness = Handedness.RIGHT) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape == (4, 4):
            r, t = m[:3, :3], m[:3, 3]
        else:
            raise ValueError(f"expected 4x4 matrix, got {m.shape}")
        return RigidTransform.from_rotation_translation(r, t, handedness)

    @staticmethod
    def from_rotation_translation(
        r: np.ndarray, t: np.ndarray, handedness: Handedness = Handedness.RIGHT
    ) -> "RigidTransform":
        return RigidTransform(matrix_to_quat(r), np.asarray(t, dtype=np.float64), handedness)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) array of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation_matrix.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        v = np.asarray(vectors, dtype=np.float64)
        return v @ self.rotation_matrix.T

    def is_close(self, other: "RigidTransform", rot_tol: float = 1e-9, trans_tol: float = 1e-9) -> bool:
        if self.handedness is not other.handedness:
            return False
        dq = quat_multiply(quat_conjugate(self.rotation), other.rotation)
        return quat_angle(quat_normalize(dq)) <= rot_tol and (
            np.linalg.norm(self.translation - other.translation) <= trans_tol
        )


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying b first, then a."""
    if a.handedness is not b.handedness:
        raise HandednessMismatch(
            f"cannot compose {a.handedness.value}-handed with {b.handedness.value}-handed transform"
        )
    q = quat_normalize(quat_multiply(a.rotation, b.rotation))
    t = a.rotation_matrix @ b.translation + a.translation
    return RigidTransform(q, t, a.handedness)


def invert(t: RigidTransform) -> RigidTransform:
    q_inv = quat_conjugate(t.rotation)
    r_inv = quat_to_matrix(q_inv)
    return RigidTransform(quat_normalize(q_inv), -(r_inv @ t.translation), t.handedness)


def _mirror_conjugate(t: RigidTransform, result_handedness: Handedness) -> RigidTransform:
    m = np.eye(4)
    m[HANDEDNESS_MIRROR_AXIS, HANDEDNESS_MIRROR_AXIS] = -1.0
    conj = m @ t.to_matrix() @ m
    return RigidTransform.from_matrix(conj, result_handedness)


def lh_to_rh(t: RigidTransform) -> RigidTransform:
    """Re-express a left-handed pose in the equivalent right-handed frames."""
    if t.handedness is not Handedness.LEFT:
        raise AlreadyRightHanded("transform is already right-handed")
    return _mirror_conjugate(t, Handedness.RIGHT)


def rh_to_lh(t: RigidTransform) -> RigidTransform:
    """Exact inverse of lh_to_rh (same mirror conjugation, flag flipped back)."""
    if t.handedness is not Handedness.RIGHT:
        raise HandednessMismatch("transform is already left-handed")
    return _mirror_conjugate(t, Handedness.LEFT)


# --- camera model -------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    """Ideal pinhole intrinsics (no distortion model)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    @property
    def matrix_inv(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])


@dataclass(frozen=True)
class Plane:
    """Plane {p : normal . p = offset}, normal unit length, offset meters."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if norm == 0.0 or not np.isfinite(norm):
            raise ValueError("plane normal must be a nonzero finite vector")
        object.__setattr__(self, "normal", _readonly(n / norm))
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.normal - self.offset


def project(p, k: CameraIntrinsics):
    """Pinhole projection of camera-frame point(s) to pixel coordinates.

    Accepts a single Point3/(3,) vector or an (N, 3) array; returns a
    Pixel or an (N, 2) array correspondingly.
    """
    arr = np.asarray(p, dtype=np.float64)
    single = arr.ndim == 1
    pts = arr.reshape(-1, 3)
    z = pts[:, 2]
    if np.any(z <= 0.0):
        raise BehindCamera(f"{int(np.sum(z <= 0.0))} point(s) at non-positive depth")
    uv = np.empty((len(pts), 2))
    uv[:, 0] = k.fx * pts[:, 0] / z + k.cx
    uv[:, 1] = k.fy * pts[:, 1] / z + k.cy
    if single:
        return Pixel(float(uv[0, 0]), float(uv[0, 1]))
    return uv


def backproject_to_plane(px, k: CameraIntrinsics, plane: Plane):
    """Intersect pixel ray(s) with a camera-frame plane.

    The ray through pixel p' is z * K^-1 p'; depth solves
    normal . p = offset. Accepts a Pixel/(2,) or an (N, 2) array.
    """
    arr = np.asarray(px, dtype=np.float64)
    single = arr.ndim == 1
    uv = arr.reshape(-1, 2)
    rays = np.empty((len(uv), 3))
    rays[:, 0] = (uv[:, 0] - k.cx) / k.fx
    rays[:, 1] = (uv[:, 1] - k.cy) / k.fy
    rays[:, 2] = 1.0
    denom = rays @ plane.normal
    if np.any(np.abs(denom) <= RAY_PLANE_EPS):
        raise RayParallelToPlane("pixel ray parallel to plane within 1e-8")
    z = plane.offset / denom
    if np.any(z <= 0.0):
        raise PointBehindCamera("plane intersection behind the camera")
    pts = rays * z[:, None]
    if single:
        return Point3(float(pts[0, 0]), float(pts[0, 1]), float(pts[0, 2]))
    return pts


def transform_plane(plane: Plane, t: RigidTransform) -> Plane:
    """Plane satisfied by t.apply(p) for every p on the input plane."""
    n = t.rotate(plane.normal)
    b = plane.offset + float(n @ t.translation)
    return Plane(n, b)
