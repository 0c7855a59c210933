"""AX = YB hand-eye calibration and trajectory conversion.

Calibration pairs (A_k, B_k) = (world-from-controller, base-from-EE)
satisfy A_k X = Y B_k with X = controller-from... strictly: X maps the
end effector into the controller frame (Q_T_EE) and Y the robot base
into the world (W_T_B). The solver runs a separable closed form first
(quaternion least squares for the two rotations, linear least squares
for the two translations) and then refines all twelve parameters with a
damped reprojection-free pose-residual minimization.

Trajectory conversion turns recorded controller poses into the relative
end-effector deltas used as the action representation, plus gripper
widths from finger marker poses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._optim import least_squares, rotvec_to_matrix
from .errors import HandednessMismatch, InsufficientExcitation, NonConvergence, TooShort
from .geometry import (
    Handedness,
    RigidTransform,
    compose,
    invert,
    matrix_to_quat,
    quat_conjugate,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
    rotation_geodesic_angle,
)

MAX_GRIPPER_WIDTH = 0.08            # meters, hardware maximum span
MIN_EXCITATION_ANGLE = math.radians(5.0)
MAX_SOLVER_ITERS = 200
ROT_TRANS_WEIGHT = 1.0              # objective weight: 1 rad == 1 m


@dataclass(frozen=True)
class CalibrationSet:
    """Paired pose measurements (world-from-controller, base-from-EE)."""

    pairs: tuple[tuple[RigidTransform, RigidTransform], ...]

    def __post_init__(self):
        if len(self.pairs) < 3:
            raise ValueError("need at least 3 calibration pairs")
        for a, b in self.pairs:
            if a.handedness is not Handedness.RIGHT or b.handedness is not Handedness.RIGHT:
                raise ValueError("calibration poses must be right-handed")
        object.__setattr__(self, "pairs", tuple(self.pairs))

    def excitation_axes(self) -> np.ndarray:
        """Axes of sufficiently large pairwise relative rotations (unit rows)."""
        rots = [quat_to_matrix(b.rotation) for _, b in self.pairs]
        axes = []
        for i in range(len(rots)):
            for j in range(i + 1, len(rots)):
                rel = rots[i].T @ rots[j]
                angle = rotation_geodesic_angle(np.eye(3), rel)
                if angle >= MIN_EXCITATION_ANGLE:
                    v = np.array([
                        rel[2, 1] - rel[1, 2],
                        rel[0, 2] - rel[2, 0],
                        rel[1, 0] - rel[0, 1],
                    ])
                    n = np.linalg.norm(v)
                    if n > 1e-12:
                        axes.append(v / n)
        return np.asarray(axes) if axes else np.zeros((0, 3))

    def check_excitation(self) -> None:
        axes = self.excitation_axes()
        if len(axes) == 0:
            raise InsufficientExcitation("no relative rotation reaches 5 degrees")
        s = np.linalg.svd(axes, compute_uv=False)
        if len(s) < 2 or s[1] < 0.1:
            raise InsufficientExcitation("rotation axes do not span two directions")


@dataclass(frozen=True)
class HandEyeResult:
    x: RigidTransform               # controller-from-EE
    y: RigidTransform               # world-from-base
    residual_rot: float             # degrees, RMS over pairs
    residual_trans: float           # meters, RMS over pairs

    def __post_init__(self):
        if self.residual_rot < 0 or self.residual_trans < 0:
            raise ValueError("residuals must be non-negative")


@dataclass(frozen=True)
class GripperState:
    width: float                    # meters in [0, MAX_GRIPPER_WIDTH]
    clamped: bool

    def __post_init__(self):
        if not (0.0 <= self.width <= MAX_GRIPPER_WIDTH):
            raise ValueError("width outside [0, 0.08] m")


def _quat_left(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [w, -z, y, x],
        [z, w, -x, y],
        [-y, x, w, z],
        [-x, -y, -z, w],
    ])


def _quat_right(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [w, z, -y, x],
        [-z, w, x, y],
        [y, -x, w, z],
        [-x, -y, -z, w],
    ])


def _closed_form(cal: CalibrationSet) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Separable initialization.

    The pairwise form A_i^-1 A_j X = X B_i^-1 B_j removes Y, and relative
    rotations are conjugate (equal scalar quaternion parts), so with both
    quaternions normalized to w >= 0 the linear system
    (L(q_relA) - R(q_relB)) q_x = 0 holds without per-pair sign
    ambiguity. Y's rotation follows by averaging R_A R_X R_B^T, and the
    two translations come from one linear least-squares solve.
    """
    rows = []
    n = len(cal.pairs)
    for i in range(n):
        for j in range(i + 1, n):
            a_i, b_i = cal.pairs[i]
            a_j, b_j = cal.pairs[j]
            q_ra = quat_normalize(quat_multiply(quat_conjugate(a_i.rotation), a_j.rotation))
            q_rb = quat_normalize(quat_multiply(quat_conjugate(b_i.rotation), b_j.rotation))
            rows.append(_quat_left(q_ra) - _quat_right(q_rb))
    m = np.vstack(rows)
    _, _, vt = np.linalg.svd(m)
    qx = vt[-1] / np.linalg.norm(vt[-1])
    rx = quat_to_matrix(qx)
    # rotation average of R_A R_X R_B^T over pairs
    acc = np.zeros((3, 3))
    for a, b in cal.pairs:
        acc += quat_to_matrix(a.rotation) @ rx @ quat_to_matrix(b.rotation).T
    u, _, vt3 = np.linalg.svd(acc)
    ry = u @ vt3
    if np.linalg.det(ry) < 0:
        ry = u @ np.diag([1.0, 1.0, -1.0]) @ vt3
    # R_A t_X - t_Y = R_Y t_B - t_A
    lhs, rhs = [], []
    for a, b in cal.pairs:
        ra = quat_to_matrix(a.rotation)
        lhs.append(np.hstack([ra, -np.eye(3)]))
        rhs.append(ry @ b.translation - a.translation)
    sol, *_ = np.linalg.lstsq(np.vstack(lhs), np.concatenate(rhs), rcond=None)
    return rx, sol[:3], ry, sol[3:]


def _pair_residuals(
    rx: np.ndarray, tx: np.ndarray, ry: np.ndarray, ty: np.ndarray, cal: CalibrationSet
) -> np.ndarray:
    """Stacked per-pair residuals: rotation log (rad, weighted) and translation."""
    res = []
    for a, b in cal.pairs:
        ra = quat_to_matrix(a.rotation)
        rb = quat_to_matrix(b.rotation)
        r_left = ra @ rx
        r_right = ry @ rb
        rel = r_left.T @ r_right
        v = 0.5 * np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
        c = 0.5 * (np.trace(rel) - 1.0)
        angle = math.acos(min(1.0, max(-1.0, c)))
        if angle > 1e-8 and math.sin(angle) > 1e-12:
            v = v / math.sin(angle) * angle
        t_left = ra @ tx + a.translation
        t_right = ry @ b.translation + ty
        res.append(np.concatenate([ROT_TRANS_WEIGHT * v, t_left - t_right]))
    return np.concatenate(res)


def solve_ax_yb(cal: CalibrationSet) -> HandEyeResult:
    """Solve A_k X = Y B_k for (X, Y) minimizing summed pose residuals."""
    cal.check_excitation()
    rx0, tx0, ry0, ty0 = _closed_form(cal)

    def residual(p: np.ndarray) -> np.ndarray:
        rx = rx0 @ rotvec_to_matrix(p[0:3])
        ry = ry0 @ rotvec_to_matrix(p[6:9])
        return _pair_residuals(rx, p[3:6], ry, p[9:12], cal)

    p0 = np.concatenate([np.zeros(3), tx0, np.zeros(3), ty0])
    p, converged, _ = least_squares(residual, p0, max_iter=MAX_SOLVER_ITERS, step_tol=1e-12)
    if not converged:
        raise NonConvergence(f"refinement did not converge in {MAX_SOLVER_ITERS} iterations")
    rx = rx0 @ rotvec_to_matrix(p[0:3])
    ry = ry0 @ rotvec_to_matrix(p[6:9])
    x = RigidTransform(matrix_to_quat(rx), p[3:6])
    y = RigidTransform(matrix_to_quat(ry), p[9:12])

    rot_errs, trans_errs = [], []
    for a, b in cal.pairs:
        left = compose(a, x)
        right = compose(y, b)
        rot_errs.append(rotation_geodesic_angle(left.rotation_matrix, right.rotation_matrix))
        trans_errs.append(np.linalg.norm(left.translation - right.translation))
    return HandEyeResult(
        x=x,
        y=y,
        residual_rot=math.degrees(float(np.sqrt(np.mean(np.square(rot_errs))))),
        residual_trans=float(np.sqrt(np.mean(np.square(trans_errs)))),
    )


def controller_to_ee(wtq: RigidTransform, x: RigidTransform) -> RigidTransform:
    """World-from-EE pose from a controller pose and the hand-eye X."""
    if wtq.handedness is not Handedness.RIGHT or x.handedness is not Handedness.RIGHT:
        raise HandednessMismatch("controller_to_ee requires right-handed transforms")
    return compose(wtq, x)


def relative_ee_trajectory(
    traj: list[RigidTransform], x: RigidTransform
) -> list[RigidTransform]:
    """Per-step deltas EE_{i+1} <- EE_i from controller poses.

    delta_i = (W_T_Q_{i+1} X)^-1 (W_T_Q_i X); composing all deltas
    right-to-left telescopes into (W_T_EE_N)^-1 W_T_EE_1.
    """
    if len(traj) < 2:
        raise TooShort("trajectory needs at least 2 poses")
    ee = [controller_to_ee(w, x) for w in traj]
    return [compose(invert(ee[i + 1]), ee[i]) for i in range(len(ee) - 1)]


def gripper_width(
    left_marker: RigidTransform,
    right_marker: RigidTransform,
    zero_offset: float = 0.0,
) -> GripperState:
    """Finger separation clamped to the hardware span."""
    raw = float(np.linalg.norm(left_marker.translation - right_marker.translation)) - zero_offset
    width = min(max(raw, 0.0), MAX_GRIPPER_WIDTH)
    return GripperState(width=width, clamped=bool(raw < 0.0 or raw > MAX_GRIPPER_WIDTH))
