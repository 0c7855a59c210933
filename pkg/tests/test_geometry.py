import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demopipe.errors import (
    AlreadyRightHanded,
    BehindCamera,
    HandednessMismatch,
    PointBehindCamera,
    RayParallelToPlane,
)
from demopipe.geometry import (
    CameraIntrinsics,
    Handedness,
    Pixel,
    Plane,
    Point3,
    RigidTransform,
    backproject_to_plane,
    compose,
    invert,
    lh_to_rh,
    project,
    quat_from_axis_angle,
    rh_to_lh,
    transform_plane,
)

UNIT_K = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=10, height=10)


def random_transform(rng, handedness=Handedness.RIGHT, trans_scale=1.0):
    axis = rng.normal(size=3)
    angle = rng.uniform(-math.pi, math.pi)
    q = quat_from_axis_angle(axis, angle)
    t = rng.normal(scale=trans_scale, size=3)
    return RigidTransform(q, t, handedness)


def translate(x, y, z, handedness=Handedness.RIGHT):
    return RigidTransform(np.array([0.0, 0.0, 0.0, 1.0]), np.array([x, y, z]), handedness)


# --- transforms ---------------------------------------------------------------

class TestCompose:
    def test_identity_neutral(self):
        rng = np.random.default_rng(0)
        t = random_transform(rng)
        ident = RigidTransform.identity()
        assert compose(ident, t).is_close(t, 1e-12, 1e-12)
        assert compose(t, ident).is_close(t, 1e-12, 1e-12)

    def test_inverse_gives_identity(self):
        rng = np.random.default_rng(1)
        t = random_transform(rng)
        assert compose(t, invert(t)).is_close(RigidTransform.identity(), 1e-12, 1e-12)

    def test_commuting_translations(self):
        out = compose(translate(1, 0, 0), translate(0, 2, 0))
        assert out.is_close(translate(1, 2, 0), 1e-12, 1e-12)

    def test_handedness_mismatch(self):
        with pytest.raises(HandednessMismatch):
            compose(translate(0, 0, 0), translate(0, 0, 0, Handedness.LEFT))

    def test_matches_matrix_product(self):
        # oracle: 4x4 homogeneous matrix product
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b = random_transform(rng), random_transform(rng)
            expected = a.to_matrix() @ b.to_matrix()
            assert np.allclose(compose(a, b).to_matrix(), expected, atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_associative(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_transform(rng) for _ in range(3))
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        assert left.is_close(right, 1e-12, 1e-12)


class TestInvert:
    def test_identity(self):
        assert invert(RigidTransform.identity()).is_close(RigidTransform.identity(), 0, 0)

    def test_pure_translation(self):
        assert invert(translate(1, 2, 3)).is_close(translate(-1, -2, -3), 1e-12, 1e-12)

    def test_matrix_inverse_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            t = random_transform(rng)
            assert np.allclose(invert(t).to_matrix(), np.linalg.inv(t.to_matrix()), atol=1e-12)


class TestHandedness:
    def mirror_oracle(self, t):
        # independent oracle: conjugate the homogeneous matrix by diag(1,1,-1,1)
        m = np.diag([1.0, 1.0, -1.0, 1.0])
        return m @ t.to_matrix() @ m

    def test_identity(self):
        out = lh_to_rh(RigidTransform.identity(Handedness.LEFT))
        assert out.handedness is Handedness.RIGHT
        assert out.is_close(RigidTransform.identity(), 0, 0)

    def test_pure_translation_flips_z(self):
        t = translate(1.0, 2.0, 3.0, Handedness.LEFT)
        out = lh_to_rh(t)
        assert np.allclose(out.translation, [1.0, 2.0, -3.0])
        assert np.allclose(out.to_matrix(), self.mirror_oracle(t), atol=1e-12)

    def test_rotation_about_x_negates_angle(self):
        q = quat_from_axis_angle([1, 0, 0], math.pi / 2)
        t = RigidTransform(q, np.zeros(3), Handedness.LEFT)
        out = lh_to_rh(t)
        expected = quat_from_axis_angle([1, 0, 0], -math.pi / 2)
        assert np.allclose(out.to_matrix(), self.mirror_oracle(t), atol=1e-12)
        assert out.is_close(RigidTransform(expected, np.zeros(3)), 1e-12, 1e-12)

    def test_rejects_right_handed(self):
        with pytest.raises(AlreadyRightHanded):
            lh_to_rh(RigidTransform.identity())

    def test_determinant_stays_positive(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            t = random_transform(rng, Handedness.LEFT)
            out = lh_to_rh(t)
            assert np.linalg.det(out.rotation_matrix) == pytest.approx(1.0, abs=1e-9)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_isometry_and_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        t = random_transform(rng, Handedness.LEFT)
        out = lh_to_rh(t)
        pts = rng.normal(size=(8, 3))
        mirrored = pts.copy()
        mirrored[:, 2] *= -1.0
        # pairwise distances preserved by the conversion
        d_before = np.linalg.norm(t.apply(pts)[:, None] - t.apply(pts)[None, :], axis=-1)
        d_after = np.linalg.norm(out.apply(mirrored)[:, None] - out.apply(mirrored)[None, :], axis=-1)
        assert np.allclose(d_before, d_after, atol=1e-12)
        back = rh_to_lh(out)
        assert back.handedness is Handedness.LEFT
        assert back.is_close(t, 1e-12, 1e-12)


class TestQuaternionContract:
    def test_storage_order_xyzw(self):
        q = quat_from_axis_angle([0, 0, 1], math.pi / 2)
        # half-angle sine in the z slot, cosine last
        assert q[2] == pytest.approx(math.sin(math.pi / 4))
        assert q[3] == pytest.approx(math.cos(math.pi / 4))

    def test_double_cover_normalized_at_construction(self):
        q = -quat_from_axis_angle([0, 1, 0], 0.3)
        t = RigidTransform(q, np.zeros(3))
        assert t.rotation[3] >= 0.0

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            RigidTransform(np.array([1.0, 1.0, 0.0, 1.0]), np.zeros(3))


# --- camera -------------------------------------------------------------------

class TestProject:
    def test_optical_axis(self):
        assert project(Point3(0, 0, 1), UNIT_K) == Pixel(0.0, 0.0)

    def test_unit_point(self):
        assert project(Point3(1, 1, 1), UNIT_K) == Pixel(1.0, 1.0)

    def test_behind_camera(self):
        with pytest.raises(BehindCamera):
            project(Point3(0, 0, -1), UNIT_K)
        with pytest.raises(BehindCamera):
            project(Point3(0, 0, 0), UNIT_K)

    def test_scale_and_principal_point(self):
        k = CameraIntrinsics(fx=400.0, fy=300.0, cx=320.0, cy=240.0, width=640, height=480)
        px = project(Point3(0.1, -0.05, 2.0), k)
        assert px.u == pytest.approx(320.0 + 400.0 * 0.1 / 2.0)
        assert px.v == pytest.approx(240.0 - 300.0 * 0.05 / 2.0)


class TestBackprojectToPlane:
    def test_axis_pixel_plane_z2(self):
        plane = Plane(np.array([0.0, 0.0, 1.0]), 2.0)
        p = backproject_to_plane(Pixel(0, 0), UNIT_K, plane)
        assert np.allclose(p, [0.0, 0.0, 2.0])

    def test_diagonal_pixel_plane_z1(self):
        plane = Plane(np.array([0.0, 0.0, 1.0]), 1.0)
        p = backproject_to_plane(Pixel(1, 1), UNIT_K, plane)
        assert np.allclose(p, [1.0, 1.0, 1.0])

    def test_parallel_ray(self):
        plane = Plane(np.array([1.0, 0.0, 0.0]), 1.0)
        with pytest.raises(RayParallelToPlane):
            backproject_to_plane(Pixel(0, 0), UNIT_K, plane)

    def test_behind_camera(self):
        plane = Plane(np.array([0.0, 0.0, 1.0]), -1.0)
        with pytest.raises(PointBehindCamera):
            backproject_to_plane(Pixel(0, 0), UNIT_K, plane)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=200, deadline=None)
    def test_roundtrip_random(self, seed):
        # project a random on-plane point, back-project, expect the same point
        rng = np.random.default_rng(seed)
        k = CameraIntrinsics(fx=450.0, fy=460.0, cx=310.0, cy=245.0, width=640, height=480)
        n = rng.normal(size=3)
        while abs(n[2]) < 0.3:
            n = rng.normal(size=3)
        plane = Plane(n, rng.uniform(0.5, 2.0) * math.copysign(1.0, n[2]))
        # sample a point on the plane in front of the camera
        for _ in range(100):
            xy = rng.uniform(-0.5, 0.5, size=2)
            z = (plane.offset - plane.normal[:2] @ xy) / plane.normal[2]
            if z > 0.1:
                break
        else:
            return
        p = np.array([xy[0], xy[1], z])
        px = project(p, k)
        back = backproject_to_plane(np.asarray(px), k, plane)
        assert np.allclose(back, p, atol=1e-9)
        again = project(np.asarray(back).reshape(1, 3), k)[0]
        assert np.allclose(again, px, atol=1e-9)

    def test_result_on_plane(self):
        rng = np.random.default_rng(7)
        k = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
        plane = Plane(np.array([0.2, -0.1, 0.97]), 1.3)
        uv = rng.uniform([0, 0], [640, 480], size=(1000, 2))
        pts = backproject_to_plane(uv, k, plane)
        assert np.max(np.abs(pts @ plane.normal - plane.offset)) < 1e-9


class TestTransformPlane:
    def test_identity(self):
        plane = Plane(np.array([0.0, 0.0, 1.0]), 0.5)
        out = transform_plane(plane, RigidTransform.identity())
        assert np.allclose(out.normal, plane.normal)
        assert out.offset == pytest.approx(plane.offset)

    def test_translation_along_normal(self):
        plane = Plane(np.array([0.0, 0.0, 1.0]), 0.0)
        out = transform_plane(plane, translate(0, 0, 1))
        assert np.allclose(out.normal, [0, 0, 1])
        assert out.offset == pytest.approx(1.0)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_point_mapping_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = rng.normal(size=3)
        while np.linalg.norm(n) < 1e-3:
            n = rng.normal(size=3)
        plane = Plane(n, rng.uniform(-1, 1))
        t = random_transform(rng)
        out = transform_plane(plane, t)
        # sample points on the source plane, map them, check the new equation
        basis = np.linalg.svd(plane.normal.reshape(1, 3))[2][1:]
        params = rng.uniform(-5, 5, size=(100, 2))
        pts = plane.offset * plane.normal + params @ basis
        mapped = t.apply(pts)
        assert np.max(np.abs(mapped @ out.normal - out.offset)) < 1e-9


class TestIntrinsicsValidation:
    def test_rejects_nonpositive_focal(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0, width=10, height=10)

    def test_rejects_principal_point_outside(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=1.0, fy=1.0, cx=10.0, cy=0.0, width=10, height=10)


class TestPlaneValidation:
    def test_normal_renormalized(self):
        p = Plane(np.array([0.0, 0.0, 2.0]), 4.0)
        assert np.allclose(p.normal, [0, 0, 1])
        assert p.offset == pytest.approx(2.0)

    def test_rejects_zero_normal(self):
        with pytest.raises(ValueError):
            Plane(np.zeros(3), 1.0)
