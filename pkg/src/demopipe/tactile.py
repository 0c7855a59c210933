"""Global-deformation point clouds from single internal sensor images.

The sensor's two contact faces each expose one LED-lit inner edge. The
frame bends in one direction only, so each edge stays inside a fixed
plane of the sensor's CAD frame. Reconstruction solves, per frame:

  1. binarize the image and split the bright structures into the two
     open edge curves and the two closed contact-layer outlines,
  2. fit each outline to a trapezoid and take its top corners,
  3. PnP those corners against their CAD positions (camera-from-CAD),
  4. back-project each edge pixel onto its face's edge plane expressed
     in the camera frame, and map the points back into the CAD frame,
  5. farthest-point-sample the merged points down to 256.

Clouds live in the CAD frame so different sensor units imaging the same
deformation produce comparable clouds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._imageops import (
    bilinear,
    component_top_left,
    connected_components,
    fit_line_tls,
    has_hole,
    intersect_lines,
    rdp_open,
    simplify_to_quad,
    trace_boundary,
)
from .errors import (
    DegenerateContour,
    DegenerateCorners,
    DegenerateConfiguration,
    EmptyInput,
    HighResidual,
    NoEdges,
    OneEdgeOnly,
)
from .geometry import CameraIntrinsics, Plane, RigidTransform, invert, transform_plane
from .pnp import reprojection_rms, solve_general_pnp, solve_planar_pnp

logger = logging.getLogger(__name__)

CLOUD_POINTS = 256
HIGH_RESIDUAL_PX = 3.0
RAY_EPS = 1e-8
MIN_EDGE_PIXELS = 8


class Face(Enum):
    LEFT_FACE = "left_face"
    RIGHT_FACE = "right_face"


@dataclass(frozen=True)
class SensorGeometry:
    """Sensor CAD-frame description used for calibration and back-projection.

    cad_corners holds the four contact-layer top corners in this fixed
    order: [left face, low y], [left face, high y], [right face, low y],
    [right face, high y]; with the camera roughly upright, low CAD y
    projects to the smaller image v of each face's trapezoid top edge.
    """

    cad_corners: np.ndarray                  # (4, 3) meters
    edge_planes: dict[Face, Plane]
    cad_rest_edges: dict[Face, np.ndarray]   # (N, 3) each
    corners_coplanar: bool = True

    def __post_init__(self):
        corners = np.asarray(self.cad_corners, dtype=np.float64)
        if corners.shape != (4, 3):
            raise ValueError("cad_corners must be (4, 3)")
        corners.setflags(write=False)
        object.__setattr__(self, "cad_corners", corners)
        for face in Face:
            if face not in self.edge_planes or face not in self.cad_rest_edges:
                raise ValueError(f"missing geometry for {face}")
        edges = {}
        for face, pts in self.cad_rest_edges.items():
            pts = np.asarray(pts, dtype=np.float64)
            resid = np.abs(pts @ self.edge_planes[face].normal - self.edge_planes[face].offset)
            if resid.max() > 1e-9:
                raise ValueError(f"rest edge of {face} off its plane by {resid.max():.2e} m")
            pts.setflags(write=False)
            edges[face] = pts
        object.__setattr__(self, "cad_rest_edges", edges)
        centered = corners - corners.mean(axis=0)
        coplanar = np.linalg.svd(centered, compute_uv=False)[-1] <= 1e-9
        if self.corners_coplanar and not coplanar:
            raise ValueError("corners_coplanar set but cad_corners are not coplanar")

    def bounding_box(self, inflate: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
        pts = np.vstack([self.cad_corners] + [self.cad_rest_edges[f] for f in Face])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        c = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo) * (1.0 + inflate) + 1e-6
        return c - half, c + half


@dataclass(frozen=True)
class EdgeObservation:
    """Ordered sub-pixel chain along one face's inner edge."""

    pixels: np.ndarray        # (N, 2) as (u, v)
    side: Face

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[1] != 2 or len(px) < MIN_EDGE_PIXELS:
            raise ValueError(f"edge needs >= {MIN_EDGE_PIXELS} (u, v) pixels")
        spans = px.max(axis=0) - px.min(axis=0)
        axis = int(np.argmax(spans))
        diffs = np.diff(px[:, axis])
        if not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValueError("pixels must be strictly ordered along the dominant axis")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class TactilePointCloud:
    """Fixed-size policy-input cloud in the sensor CAD frame."""

    points: np.ndarray        # (256, 3) float32
    source_sensor: str = ""
    timestamp: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.shape != (CLOUD_POINTS, 3):
            raise ValueError(f"cloud must have exactly {CLOUD_POINTS} points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("cloud contains non-finite points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def check_bounds(self, geom: SensorGeometry, inflate: float = 0.2) -> bool:
        lo, hi = geom.bounding_box(inflate)
        return bool(np.all(self.points >= lo) and np.all(self.points <= hi))


@dataclass(frozen=True)
class ReconstructedEdge:
    points: np.ndarray        # (N, 3) CAD frame
    side: Face
    dropped: int


# --- stages -------------------------------------------------------------------

def binarize(img: np.ndarray, method: str = "otsu", threshold: float | None = None) -> np.ndarray:
    """Foreground mask of the LED-lit edge structures.

    method 'otsu' picks the histogram threshold automatically; 'fixed'
    uses ``threshold``. Uniform images fall back to a mid-scale cut so
    that black frames stay empty and white frames stay full.
    """
    gray = np.asarray(img, dtype=np.float64)
    if gray.ndim == 3:
        gray = gray.mean(axis=2)
    if method == "fixed":
        if threshold is None:
            raise ValueError("fixed binarization needs a threshold")
        return gray > threshold
    if method != "otsu":
        raise ValueError(f"unknown binarization method {method!r}")
    lo, hi = gray.min(), gray.max()
    if hi - lo < 1.0:
        return gray > 127.0
    raw = np.asarray(img)
    if raw.dtype == np.uint8 and raw.ndim == 2:
        hist = np.bincount(raw.ravel(), minlength=256).astype(np.float64)
        centers = np.arange(256, dtype=np.float64)
    else:
        hist, edges = np.histogram(gray, bins=256, range=(lo, hi + 1e-9))
        centers = 0.5 * (edges[:-1] + edges[1:])
    w = hist.astype(np.float64)
    total = w.sum()
    cum_w = np.cumsum(w)
    cum_m = np.cumsum(w * centers)
    m_total = cum_m[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (m_total * cum_w - cum_m * total) ** 2 / (cum_w * (total - cum_w))
    between[~np.isfinite(between)] = -1.0
    t = centers[int(np.argmax(between))]
    return gray > t


def _split_structures(
    mask: np.ndarray, min_pixels: int = 30
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Partition mask components into open curves and closed outlines.

    Returns (curve_components, ring_components) as pixel arrays (row, col).
    A component is a ring when it encloses background.
    """
    curves, rings = [], []
    for comp in connected_components(mask, min_size=min_pixels):
        (rings if has_hole(mask, comp) else curves).append(comp)
    return curves, rings


def _component_chain(
    comp: np.ndarray, intensity: np.ndarray | None
) -> np.ndarray | None:
    """Ordered sub-pixel chain through a curve component.

    Walks the dominant image axis one column (or row) at a time and takes
    the intensity-weighted centroid across the stroke; falls back to the
    mask centroid when no intensity image is given.
    """
    rows, cols = comp[:, 0], comp[:, 1]
    u_span = cols.max() - cols.min()
    v_span = rows.max() - rows.min()
    along_u = u_span >= v_span
    key = cols if along_u else rows
    other = rows if along_u else cols
    order = np.argsort(key, kind="stable")
    key, other = key[order], other[order]
    uniq, starts = np.unique(key, return_index=True)
    if len(uniq) < MIN_EDGE_PIXELS:
        return None
    chain = np.empty((len(uniq), 2))
    bounds = np.append(starts, len(key))
    for i, k in enumerate(uniq):
        members = other[bounds[i]:bounds[i + 1]]
        if intensity is None:
            center = members.mean()
        else:
            if along_u:
                weights = intensity[members, k].astype(np.float64)
            else:
                weights = intensity[k, members].astype(np.float64)
            wsum = weights.sum()
            center = float(members @ weights / wsum) if wsum > 0 else members.mean()
        chain[i] = (k, center) if along_u else (center, k)
    return chain  # (u, v)


def _edges_from_curves(
    curves: list[np.ndarray], image_width: int, intensity: np.ndarray | None
) -> list[EdgeObservation]:
    half = image_width / 2.0
    per_side: dict[Face, list[np.ndarray]] = {Face.LEFT_FACE: [], Face.RIGHT_FACE: []}
    for comp in curves:
        chain = _component_chain(comp, intensity)
        if chain is None:
            continue
        side = Face.LEFT_FACE if chain[:, 0].mean() < half else Face.RIGHT_FACE
        per_side[side].append(chain)
    observations = []
    for face in (Face.LEFT_FACE, Face.RIGHT_FACE):
        if per_side[face]:
            chain = max(per_side[face], key=len)
            observations.append(EdgeObservation(pixels=chain, side=face))
    if not observations:
        raise NoEdges("no edge structures in mask")
    if len(observations) == 1:
        raise OneEdgeOnly(
            f"only {observations[0].side.value} visible", observations=observations
        )
    return observations


def extract_edges(mask: np.ndarray, intensity: np.ndarray | None = None) -> list[EdgeObservation]:
    """The two inner-edge observations, left face then right face.

    Closed outlines (contact-layer boundaries) are ignored here. Raises
    NoEdges when nothing usable is present and OneEdgeOnly (carrying the
    partial result) when only one face is visible.
    """
    mask = np.asarray(mask, dtype=bool)
    curves, _rings = _split_structures(mask)
    return _edges_from_curves(curves, mask.shape[1], intensity)


def fit_trapezoid(contour: np.ndarray) -> np.ndarray:
    """Four trapezoid vertices from a contour chain, top edge first.

    Simplifies the contour to exactly four vertices by raising the
    polygon tolerance, then refines each vertex as the least-squares
    intersection of the two adjacent side lines fitted to the contour
    points. The 'top' edge is the shorter of the two opposite sides that
    are most nearly parallel; its endpoints come first, ordered by
    increasing v, followed by the remaining two in cycle order.
    """
    pts = np.asarray(contour, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 8:
        raise DegenerateContour("need a chain of >= 8 contour points")
    centered = pts - pts.mean(axis=0)
    if np.linalg.svd(centered, compute_uv=False)[1] <= 1e-9 * max(1.0, np.linalg.norm(centered)):
        raise DegenerateContour("contour points are collinear")
    quad = simplify_to_quad(pts)
    if quad is None:
        raise DegenerateContour("could not reduce contour to four vertices")
    quad = _refine_vertices_from_contour(quad, pts)
    return _canonical_trapezoid(quad)


def _refine_vertices_from_contour(quad: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Per-vertex refinement: TLS lines through each side's contour points."""
    # assign contour points to the nearest side
    sides = [(quad[i], quad[(i + 1) % 4]) for i in range(4)]
    dists = np.empty((len(pts), 4))
    for i, (a, b) in enumerate(sides):
        d = b - a
        len2 = float(d @ d)
        t = np.clip(((pts - a) @ d) / max(len2, 1e-12), 0.0, 1.0)
        proj = a + t[:, None] * d
        dists[:, i] = np.linalg.norm(pts - proj, axis=1)
    assign = np.argmin(dists, axis=1)
    lines = []
    for i, (a, b) in enumerate(sides):
        sel = pts[assign == i]
        if len(sel) >= 2:
            # drop points hugging the corners; they belong to the bend
            d = b - a
            t = ((sel - a) @ d) / max(float(d @ d), 1e-12)
            inner = sel[(t > 0.12) & (t < 0.88)]
            if len(inner) >= 2:
                sel = inner
            lines.append(fit_line_tls(sel))
        else:
            lines.append((a, (b - a) / max(np.linalg.norm(b - a), 1e-12)))
    refined = quad.copy()
    for i in range(4):
        la, lb = lines[(i - 1) % 4], lines[i]
        x = intersect_lines(la[0], la[1], lb[0], lb[1])
        if x is not None and np.linalg.norm(x - quad[i]) < 10.0:
            refined[i] = x
    return refined


def _canonical_trapezoid(quad: np.ndarray) -> np.ndarray:
    # pair (0,2) vs (1,3): pick the more parallel pair as the parallel sides
    def pair_parallelism(i):
        d1 = quad[(i + 1) % 4] - quad[i]
        d2 = quad[(i + 3) % 4] - quad[(i + 2) % 4]  # opposite side, reversed
        n1, n2 = np.linalg.norm(d1), np.linalg.norm(d2)
        if n1 < 1e-9 or n2 < 1e-9:
            return -1.0
        return abs(float(d1 @ d2) / (n1 * n2))

    first = 0 if pair_parallelism(0) >= pair_parallelism(1) else 1
    side_a = (first, (first + 1) % 4)
    side_b = ((first + 2) % 4, (first + 3) % 4)
    len_a = np.linalg.norm(quad[side_a[1]] - quad[side_a[0]])
    len_b = np.linalg.norm(quad[side_b[1]] - quad[side_b[0]])
    top = side_a if len_a <= len_b else side_b
    order = [top[0], top[1], (top[1] + 1) % 4, (top[1] + 2) % 4]
    out = quad[order]
    if out[0][1] > out[1][1]:  # top edge endpoints by increasing v
        out = out[[1, 0, 3, 2]]
    return out


def _refine_quad_ridge(gray: np.ndarray, quad: np.ndarray) -> np.ndarray:
    """Snap trapezoid sides onto bright-stroke centerlines.

    For each side, perpendicular intensity profiles are sampled and their
    brightness centroids fitted with a TLS line; vertices move to the
    line intersections.
    """
    lines = []
    for i in range(4):
        a, b = quad[i], quad[(i + 1) % 4]
        side = b - a
        length = np.linalg.norm(side)
        if length < 6.0:
            lines.append(None)
            continue
        direction = side / length
        normal = np.array([-direction[1], direction[0]])
        m = int(np.clip(length * 0.5 / 2.0, 5, 20))
        ts = np.linspace(0.15, 0.85, m)
        base = a + ts[:, None] * side                       # (m, 2)
        s = np.arange(-3.0, 3.0 + 1e-9, 0.25)
        xs = base[:, 0:1] + s * normal[0]                   # (m, len(s))
        ys = base[:, 1:2] + s * normal[1]
        inb = (
            (xs.min(axis=1) >= 1) & (xs.max(axis=1) <= gray.shape[1] - 2)
            & (ys.min(axis=1) >= 1) & (ys.max(axis=1) <= gray.shape[0] - 2)
        )
        if not inb.any():
            lines.append(None)
            continue
        prof = bilinear(gray, xs[inb], ys[inb])
        prof = prof - prof.min(axis=1, keepdims=True)
        totals = prof.sum(axis=1)
        offs = np.full(len(prof), np.inf)
        good = totals >= 50.0
        offs[good] = prof[good] @ s / totals[good]
        keep = np.abs(offs) <= 2.0
        pts = base[inb][keep] + offs[keep, None] * normal
        if len(pts) < 3:
            lines.append(None)
            continue
        lines.append(fit_line_tls(pts))
    refined = quad.copy()
    for i in range(4):
        la, lb = lines[(i - 1) % 4], lines[i]
        if la is None or lb is None:
            continue
        x = intersect_lines(la[0], la[1], lb[0], lb[1])
        if x is not None and np.linalg.norm(x - quad[i]) <= 4.0:
            refined[i] = x
    return refined


def calibrate_extrinsics(
    top_corners: np.ndarray, geom: SensorGeometry, k: CameraIntrinsics
) -> RigidTransform:
    """Camera-from-CAD transform from the four top-corner observations."""
    corners = np.asarray(top_corners, dtype=np.float64)
    if corners.shape != (4, 2):
        raise DegenerateConfiguration("need exactly 4 corner pixels")
    try:
        if geom.corners_coplanar:
            pose, rms = solve_planar_pnp(geom.cad_corners, corners, k)
        else:
            pose, rms = solve_general_pnp(geom.cad_corners, corners, k)
    except DegenerateCorners as e:
        raise DegenerateConfiguration(str(e)) from e
    if rms > HIGH_RESIDUAL_PX:
        raise HighResidual(
            f"corner reprojection RMS {rms:.2f} px exceeds {HIGH_RESIDUAL_PX} px", rms_px=rms
        )
    return pose


def reconstruct_edge(
    obs: EdgeObservation,
    geom: SensorGeometry,
    extrinsics: RigidTransform,
    k: CameraIntrinsics,
) -> ReconstructedEdge:
    """Back-project an edge observation onto its CAD-frame edge plane.

    Rays numerically parallel to the plane or intersecting behind the
    camera are dropped and counted rather than failing the frame.
    """
    plane_cam = transform_plane(geom.edge_planes[obs.side], extrinsics)
    uv = obs.pixels
    rays = np.column_stack([
        (uv[:, 0] - k.cx) / k.fx,
        (uv[:, 1] - k.cy) / k.fy,
        np.ones(len(uv)),
    ])
    denom = rays @ plane_cam.normal
    ok = np.abs(denom) > RAY_EPS
    z = np.zeros(len(uv))
    z[ok] = plane_cam.offset / denom[ok]
    ok &= z > 0.0
    pts_cam = rays[ok] * z[ok][:, None]
    pts_cad = invert(extrinsics).apply(pts_cam)
    return ReconstructedEdge(points=pts_cad, side=obs.side, dropped=int(np.sum(~ok)))


def resample_pointcloud(
    points: np.ndarray, n: int = CLOUD_POINTS, source_sensor: str = "", timestamp: float = 0.0
) -> TactilePointCloud:
    """Fix a point set to exactly n points.

    More input than n: farthest-point sampling seeded at the first point
    (deterministic, output is a subset). Less: cyclic repetition with a
    warning. Exactly n: unchanged.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyInput("cannot resample an empty point set")
    if len(pts) == n:
        out = pts
    elif len(pts) < n:
        logger.warning("padding point cloud by repetition: %d -> %d points", len(pts), n)
        out = pts[np.arange(n) % len(pts)]
    else:
        out = pts[farthest_point_indices(pts, n)]
    return TactilePointCloud(points=out.astype(np.float32), source_sensor=source_sensor, timestamp=timestamp)


def farthest_point_indices(pts: np.ndarray, n: int) -> np.ndarray:
    """Greedy farthest-point selection starting from index 0."""
    sel = np.empty(n, dtype=int)
    sel[0] = 0
    diff = pts - pts[0]
    dist2 = np.einsum("ij,ij->i", diff, diff)
    for i in range(1, n):
        idx = int(np.argmax(dist2))
        sel[i] = idx
        diff = pts - pts[idx]
        np.minimum(dist2, np.einsum("ij,ij->i", diff, diff), out=dist2)
    return sel


def reconstruct_frame(
    img: np.ndarray,
    geom: SensorGeometry,
    k: CameraIntrinsics,
    source_sensor: str = "",
    timestamp: float = 0.0,
    binarize_method: str = "otsu",
    fixed_threshold: float | None = None,
) -> TactilePointCloud:
    """Full single-image reconstruction (see module docstring).

    Stage failures propagate with a ``stage`` attribute naming the stage.
    """
    gray = np.asarray(img, dtype=np.float64)
    if gray.ndim == 3:
        gray = gray.mean(axis=2)

    def staged(stage, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as e:
            e.stage = stage
            raise

    mask = staged("binarize", binarize, img, binarize_method, fixed_threshold)
    curves, rings = staged("extract_edges", _split_structures, mask)
    observations = staged("extract_edges", _edges_from_curves, curves, mask.shape[1], gray)

    def corner_stage():
        per_side: dict[Face, np.ndarray] = {}
        half = mask.shape[1] / 2.0
        for ring in rings:
            contour = trace_boundary(mask, component_top_left(ring))
            chain = contour[:, ::-1].astype(np.float64)  # (u, v)
            trap = fit_trapezoid(chain)
            trap = _refine_quad_ridge(gray, trap)
            trap = _canonical_trapezoid(trap)
            side = Face.LEFT_FACE if trap[:, 0].mean() < half else Face.RIGHT_FACE
            if side in per_side:
                raise DegenerateContour(f"two contact outlines on {side.value}")
            per_side[side] = trap
        if set(per_side) != {Face.LEFT_FACE, Face.RIGHT_FACE}:
            raise NoEdges("contact-layer outlines not found on both faces")
        return np.vstack([per_side[Face.LEFT_FACE][:2], per_side[Face.RIGHT_FACE][:2]])

    top_corners = staged("fit_trapezoid", corner_stage)
    extr = staged("calibrate_extrinsics", calibrate_extrinsics, top_corners, geom, k)
    pieces = [
        staged("reconstruct_edge", reconstruct_edge, obs, geom, extr, k)
        for obs in observations
    ]
    merged = np.vstack([p.points for p in pieces])
    cloud = staged(
        "resample", resample_pointcloud, merged, CLOUD_POINTS, source_sensor, timestamp
    )
    if not cloud.check_bounds(geom):
        raise DegenerateConfiguration("reconstructed cloud escapes the sensor bounding box")
    return cloud
