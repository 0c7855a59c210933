"""Perspective-n-Point pose estimation from point correspondences.

Two branches, selected by whether the object points are coplanar:

  planar  - homography decomposition giving the classic two-fold pose
            ambiguity; both candidates are refined by damped reprojection
            minimization and disambiguated by positive depth and lower
            reprojection error.
  general - Grunert P3P on point triples, disambiguated against the
            remaining correspondences, then the same refinement.

Both return the camera-from-object transform.
"""

from __future__ import annotations

import math

import numpy as np

from ._optim import least_squares, matrix_to_rotvec, rotvec_to_matrix
from .errors import DegenerateCorners, PnPAmbiguous
from .geometry import CameraIntrinsics, Handedness, RigidTransform

# Refinement budget fixed by the module contract.
MAX_REFINE_ITERS = 50
REFINE_STEP_TOL = 1e-10

# Candidate poses whose reprojection RMS ratio falls below this are
# reported as ambiguous instead of silently picking one.
AMBIGUITY_RATIO = 1.2

# Candidates closer than this (rotation angle, rad) are the same pose.
_SAME_POSE_ANGLE = 1e-3

COPLANARITY_TOL = 1e-9


def reprojection_rms(
    pose: RigidTransform, object_pts: np.ndarray, image_pts: np.ndarray, k: CameraIntrinsics
) -> float:
    cam = pose.apply(object_pts)
    z = cam[:, 2]
    if np.any(z <= 0):
        return float("inf")
    uv = np.column_stack([k.fx * cam[:, 0] / z + k.cx, k.fy * cam[:, 1] / z + k.cy])
    err = uv - image_pts
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def points_coplanar(object_pts: np.ndarray, tol: float = COPLANARITY_TOL) -> bool:
    pts = np.asarray(object_pts, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    return bool(s[-1] <= tol * max(1.0, s[0]))


def _check_not_collinear(pts: np.ndarray, what: str) -> None:
    pts = np.asarray(pts, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s.size < 2 or s[1] <= 1e-9 * max(1.0, s[0]):
        raise DegenerateCorners(f"{what} points are collinear")


def _refine(
    r0: np.ndarray,
    t0: np.ndarray,
    object_pts: np.ndarray,
    image_pts: np.ndarray,
    k: CameraIntrinsics,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Minimize pixel reprojection error around (r0, t0)."""

    fx, fy, cx, cy = k.fx, k.fy, k.cx, k.cy

    def residual(x: np.ndarray) -> np.ndarray:
        r = r0 @ rotvec_to_matrix(x[:3])
        cam = object_pts @ r.T + x[3:]
        z = np.clip(cam[:, 2], 1e-9, None)
        out = np.empty((len(cam), 2))
        out[:, 0] = fx * cam[:, 0] / z + cx - image_pts[:, 0]
        out[:, 1] = fy * cam[:, 1] / z + cy - image_pts[:, 1]
        return out.ravel()

    x0 = np.concatenate([np.zeros(3), t0])
    x, _, _ = least_squares(residual, x0, max_iter=MAX_REFINE_ITERS, step_tol=REFINE_STEP_TOL)
    r = r0 @ rotvec_to_matrix(x[:3])
    t = x[3:]
    rms = reprojection_rms(
        RigidTransform.from_rotation_translation(r, t), object_pts, image_pts, k
    )
    return r, t, rms


def _homography_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Homography mapping src (N,2) to dst (N,2), Hartley-normalized DLT."""

    def normalizer(pts):
        c = pts.mean(axis=0)
        scale = math.sqrt(2.0) / max(np.mean(np.linalg.norm(pts - c, axis=1)), 1e-12)
        t = np.array([[scale, 0, -scale * c[0]], [0, scale, -scale * c[1]], [0, 0, 1.0]])
        return t

    ts, td = normalizer(src), normalizer(dst)
    s = (np.column_stack([src, np.ones(len(src))]) @ ts.T)[:, :2]
    d = (np.column_stack([dst, np.ones(len(dst))]) @ td.T)[:, :2]
    rows = []
    for (x, y), (u, v) in zip(s, d):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    a = np.asarray(rows)
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] <= 1e-12 * max(sv[0], 1.0):
        raise DegenerateCorners("homography system is rank deficient")
    h = vt[-1].reshape(3, 3)
    return np.linalg.inv(td) @ h @ ts


def _project_to_so3(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


def _planar_candidates(
    plane_pts: np.ndarray, image_pts: np.ndarray, k: CameraIntrinsics
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Initial (R, t) candidates mapping plane coords (x,y,0) to camera."""
    h = _homography_dlt(plane_pts, image_pts)
    a = k.matrix_inv @ h
    n1, n2 = np.linalg.norm(a[:, 0]), np.linalg.norm(a[:, 1])
    if n1 < 1e-12 or n2 < 1e-12:
        raise DegenerateCorners("degenerate homography decomposition")
    lam = 2.0 / (n1 + n2)
    r1, r2, t = lam * a[:, 0], lam * a[:, 1], lam * a[:, 2]
    if t[2] < 0:
        r1, r2, t = -r1, -r2, -t
    r = _project_to_so3(np.column_stack([r1, r2, np.cross(r1, r2)]))

    # classic planar ambiguity: reflect the target normal about the
    # viewing direction and rotate the pose to match
    n_cam = r[:, 2]
    v = t / max(np.linalg.norm(t), 1e-12)
    n_ref = 2.0 * float(v @ n_cam) * v - n_cam
    axis = np.cross(n_cam, n_ref)
    s = np.linalg.norm(axis)
    candidates = [(r, t)]
    if s > 1e-12:
        angle = math.atan2(s, float(n_cam @ n_ref))
        r_alt = rotvec_to_matrix(axis / s * angle) @ r
        candidates.append((r_alt, t.copy()))
    return candidates


def solve_planar_pnp(
    object_pts: np.ndarray, image_pts: np.ndarray, k: CameraIntrinsics
) -> tuple[RigidTransform, float]:
    """Pose from >=4 coplanar object points and their pixels.

    Returns (camera-from-object, reprojection RMS in px). Raises
    PnPAmbiguous when the two planar solutions are indistinguishable.
    """
    object_pts = np.asarray(object_pts, dtype=np.float64)
    image_pts = np.asarray(image_pts, dtype=np.float64)
    if len(object_pts) < 4 or len(object_pts) != len(image_pts):
        raise DegenerateCorners("need >= 4 point correspondences")
    _check_not_collinear(object_pts, "object")
    _check_not_collinear(image_pts, "image")

    # plane chart: object points expressed as (x, y, 0) in their own plane
    centroid = object_pts.mean(axis=0)
    centered = object_pts - centroid
    _, sv, vt = np.linalg.svd(centered)
    if sv[-1] > COPLANARITY_TOL * max(1.0, sv[0]):
        raise DegenerateCorners("object points are not coplanar")
    basis = vt[:2]
    if np.linalg.det(np.vstack([basis, np.cross(basis[0], basis[1])])) < 0:
        basis = basis[[1, 0]]
    plane_pts = centered @ basis.T
    plane_to_object_r = np.vstack([basis, np.cross(basis[0], basis[1])]).T

    refined = []
    for r0, t0 in _planar_candidates(plane_pts, image_pts, k):
        plane3 = np.column_stack([plane_pts, np.zeros(len(plane_pts))])
        r, t, rms = _refine(r0, t0, plane3, image_pts, k)
        # fold the plane chart back into the object frame
        r_obj = r @ plane_to_object_r.T
        t_obj = t - r_obj @ centroid
        refined.append((RigidTransform.from_rotation_translation(r_obj, t_obj), rms))

    refined.sort(key=lambda st: st[1])
    best, best_rms = refined[0]
    if len(refined) == 2:
        alt, alt_rms = refined[1]
        rel = np.trace(best.rotation_matrix.T @ alt.rotation_matrix)
        angle = math.acos(min(1.0, max(-1.0, 0.5 * (rel - 1.0))))
        if angle > _SAME_POSE_ANGLE and alt_rms + 1e-12 < AMBIGUITY_RATIO * (best_rms + 1e-12):
            raise PnPAmbiguous(
                f"planar pose ambiguous (rms {best_rms:.4g} vs {alt_rms:.4g})",
                solutions=[best, alt],
                residuals=[best_rms, alt_rms],
            )
    return best, best_rms


def _p3p_grunert(obj: np.ndarray, rays: np.ndarray) -> list[np.ndarray]:
    """Grunert's P3P: distances from camera center to three object points.

    Returns candidate (s1, s2, s3) triples.
    """
    a = np.linalg.norm(obj[1] - obj[2])
    b = np.linalg.norm(obj[0] - obj[2])
    c = np.linalg.norm(obj[0] - obj[1])
    if min(a, b, c) < 1e-12:
        return []
    ca = float(rays[1] @ rays[2])
    cb = float(rays[0] @ rays[2])
    cc = float(rays[0] @ rays[1])
    a2, b2, c2 = a * a, b * b, c * c
    # quartic in v = s3/s1, Haralick's formulation of Grunert's elimination
    aq = (a2 - c2) / b2
    a_4 = (aq - 1.0) ** 2 - 4.0 * c2 / b2 * ca * ca
    a_3 = 4.0 * (
        aq * (1.0 - aq) * cb
        - (1.0 - (a2 + c2) / b2) * ca * cc
        + 2.0 * c2 / b2 * ca * ca * cb
    )
    a_2 = 2.0 * (
        aq * aq
        - 1.0
        + 2.0 * aq * aq * cb * cb
        + 2.0 * (b2 - c2) / b2 * ca * ca
        - 4.0 * (a2 + c2) / b2 * ca * cb * cc
        + 2.0 * (b2 - a2) / b2 * cc * cc
    )
    a_1 = 4.0 * (
        -aq * (1.0 + aq) * cb
        + 2.0 * a2 / b2 * cc * cc * cb
        - (1.0 - (a2 + c2) / b2) * ca * cc
    )
    a_0 = (1.0 + aq) ** 2 - 4.0 * a2 / b2 * cc * cc
    coeffs = np.array([a_4, a_3, a_2, a_1, a_0])
    if np.max(np.abs(coeffs)) < 1e-15:
        return []
    roots = np.roots(coeffs)
    out = []
    for root in roots:
        if abs(root.imag) > 1e-8:
            continue
        v = float(root.real)
        denom = 1.0 + v * v - 2.0 * v * cb
        if denom <= 1e-12:
            continue
        s1 = math.sqrt(b2 / denom)
        s3 = v * s1
        # s2 from triangle (s1, s2) with angle cc opposite side c
        disc = s1 * s1 * cc * cc - (s1 * s1 - c2)
        if disc < 0:
            continue
        for sign in (1.0, -1.0):
            s2 = s1 * cc + sign * math.sqrt(disc)
            if s2 <= 0:
                continue
            # consistency against the remaining triangle
            res = s2 * s2 + s3 * s3 - 2.0 * s2 * s3 * ca - a2
            if abs(res) < 1e-3 * a2 + 1e-9:
                out.append(np.array([s1, s2, s3]))
    return out


def _absolute_orientation(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid transform mapping src points onto dst (Kabsch)."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, cd - r @ cs


def solve_general_pnp(
    object_pts: np.ndarray, image_pts: np.ndarray, k: CameraIntrinsics
) -> tuple[RigidTransform, float]:
    """Pose from >=4 correspondences without a coplanarity assumption."""
    object_pts = np.asarray(object_pts, dtype=np.float64)
    image_pts = np.asarray(image_pts, dtype=np.float64)
    if len(object_pts) < 4 or len(object_pts) != len(image_pts):
        raise DegenerateCorners("need >= 4 point correspondences")
    _check_not_collinear(object_pts, "object")
    _check_not_collinear(image_pts, "image")

    rays = np.column_stack([
        (image_pts[:, 0] - k.cx) / k.fx,
        (image_pts[:, 1] - k.cy) / k.fy,
        np.ones(len(image_pts)),
    ])
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)

    best: tuple[np.ndarray, np.ndarray] | None = None
    best_rms = float("inf")
    n = len(object_pts)
    triples = [(i, j, l) for i in range(n) for j in range(i + 1, n) for l in range(j + 1, n)]
    for idx in triples[:10]:
        sel = list(idx)
        for dists in _p3p_grunert(object_pts[sel], rays[sel]):
            cam_pts = rays[sel] * dists[:, None]
            r, t = _absolute_orientation(object_pts[sel], cam_pts)
            pose = RigidTransform.from_rotation_translation(r, t)
            rms = reprojection_rms(pose, object_pts, image_pts, k)
            if rms < best_rms:
                best_rms = rms
                best = (r, t)
    if best is None:
        raise DegenerateCorners("P3P produced no feasible pose")
    r, t, rms = _refine(best[0], best[1], object_pts, image_pts, k)
    return RigidTransform.from_rotation_translation(r, t), rms


def solve_pnp(
    object_pts: np.ndarray, image_pts: np.ndarray, k: CameraIntrinsics
) -> tuple[RigidTransform, float]:
    """Dispatch to the planar or general branch based on coplanarity."""
    if points_coplanar(object_pts, tol=1e-9):
        return solve_planar_pnp(object_pts, image_pts, k)
    return solve_general_pnp(object_pts, image_pts, k)
