import math

import numpy as np
import pytest

from demopipe.errors import DegenerateCorners, PnPAmbiguous
from demopipe.geometry import CameraIntrinsics, RigidTransform, quat_from_axis_angle
from demopipe.pnp import (
    points_coplanar,
    reprojection_rms,
    solve_general_pnp,
    solve_planar_pnp,
    solve_pnp,
)

K = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)

SQUARE = np.array([
    [-0.01, -0.01, 0.0],
    [0.01, -0.01, 0.0],
    [0.01, 0.01, 0.0],
    [-0.01, 0.01, 0.0],
])


def forward(pose, object_pts):
    cam = pose.apply(object_pts)
    return np.column_stack([
        K.fx * cam[:, 0] / cam[:, 2] + K.cx,
        K.fy * cam[:, 1] / cam[:, 2] + K.cy,
    ])


def pose_error(a, b):
    rel = a.rotation_matrix.T @ b.rotation_matrix
    ang = math.acos(min(1.0, max(-1.0, 0.5 * (np.trace(rel) - 1.0))))
    return ang, float(np.linalg.norm(a.translation - b.translation))


def make_pose(rng, tilt_max_deg=40.0, z_range=(0.2, 0.6)):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(rng.uniform(5.0, tilt_max_deg))
    q = quat_from_axis_angle(axis, angle)
    t = np.array([rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(*z_range)])
    return RigidTransform(q, t)


class TestPlanar:
    def test_exact_recovery_random_poses(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            truth = make_pose(rng)
            pose, rms = solve_planar_pnp(SQUARE, forward(truth, SQUARE), K)
            ang, trans = pose_error(pose, truth)
            assert rms < 1e-6
            assert ang < 1e-6
            assert trans < 1e-6

    def test_fronto_parallel(self):
        truth = RigidTransform(np.array([0.0, 0.0, 0.0, 1.0]), np.array([0.0, 0.0, 0.3]))
        pose, rms = solve_planar_pnp(SQUARE, forward(truth, SQUARE), K)
        assert rms < 1e-6
        assert pose.translation[2] == pytest.approx(0.3, abs=1e-6)

    def test_collinear_object_raises(self):
        pts = np.array([[0.0, 0.0, 0.0], [0.01, 0.0, 0.0], [0.02, 0.0, 0.0], [0.03, 0.0, 0.0]])
        with pytest.raises(DegenerateCorners):
            solve_planar_pnp(pts, np.array([[0, 0], [10, 0], [20, 0], [30, 0]]), K)

    def test_ambiguous_reports_both(self):
        # shallow tilt plus corner noise puts the two planar solutions
        # within the reporting ratio; both candidates must come back
        rng = np.random.default_rng(3)
        truth = RigidTransform(
            quat_from_axis_angle([1.0, 0.0, 0.0], math.radians(10.0)),
            np.array([0.0, 0.0, 0.4]),
        )
        uv = forward(truth, SQUARE) + rng.normal(scale=0.25, size=(4, 2))
        with pytest.raises(PnPAmbiguous) as exc:
            solve_planar_pnp(SQUARE, uv, K)
        assert len(exc.value.solutions) == 2
        assert len(exc.value.residuals) == 2
        assert exc.value.residuals[0] <= exc.value.residuals[1]

    def test_noisy_still_close(self):
        # noise at the level the synthetic corner detector delivers
        rng = np.random.default_rng(13)
        for _ in range(20):
            truth = make_pose(rng, tilt_max_deg=40.0)
            uv = forward(truth, SQUARE) + rng.normal(scale=0.03, size=(4, 2))
            pose, _ = solve_planar_pnp(SQUARE, uv, K)
            ang, trans = pose_error(pose, truth)
            assert math.degrees(ang) < 1.5
            assert trans < 0.005


class TestGeneral:
    POINTS = np.array([
        [-0.02, -0.015, 0.0],
        [0.02, -0.015, 0.002],
        [0.02, 0.015, -0.003],
        [-0.02, 0.015, 0.004],
        [0.0, 0.0, 0.01],
    ])

    def test_exact_recovery(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            truth = make_pose(rng)
            pose, rms = solve_general_pnp(self.POINTS, forward(truth, self.POINTS), K)
            ang, trans = pose_error(pose, truth)
            assert rms < 1e-6
            assert ang < 1e-6
            assert trans < 1e-6

    def test_dispatch_by_coplanarity(self):
        assert points_coplanar(SQUARE)
        assert not points_coplanar(self.POINTS)
        rng = np.random.default_rng(19)
        truth = make_pose(rng)
        pose, _ = solve_pnp(self.POINTS, forward(truth, self.POINTS), K)
        ang, trans = pose_error(pose, truth)
        assert ang < 1e-6 and trans < 1e-6


def test_reprojection_rms_zero_at_truth():
    rng = np.random.default_rng(23)
    truth = make_pose(rng)
    assert reprojection_rms(truth, SQUARE, forward(truth, SQUARE), K) < 1e-9
