"""Square binary fiducial markers: dictionary, codec, detector, pose.

Markers are 6x6 bit grids: a one-cell black border around a 4x4 payload.
The dictionary is self-generated (no external marker standard): 50 ids
drawn from a seeded permutation of the 16-bit payload space, kept only if
every rotation stays Hamming-4 away from every already-accepted rotation.
The generation is deterministic and versioned; regenerating with the same
version yields bit-identical grids.

Detection pipeline: adaptive threshold (local mean minus a constant) ->
connected-component border tracing -> polygon simplification to a convex
quadrilateral -> perspective unwarp and cell-majority bit sampling ->
dictionary lookup under four rotations. Corners are refined to sub-pixel
by sampling each quad side's intensity mid-crossings and intersecting the
fitted side lines; a quadratic fit on the 5x5 gradient magnitude is kept
as a standalone single-corner refiner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._imageops import (
    bilinear as _bilinear,
    connected_components as _connected_components,
    component_top_left,
    fit_line_tls as _fit_line_tls,
    intersect_lines as _intersect_lines,
    local_mean as _local_mean,
    polygon_area as _polygon_area,
    simplify_to_quad,
    trace_boundary,
)
from .errors import DegenerateCorners, NoMarker, UnknownId
from .geometry import CameraIntrinsics, RigidTransform
from .pnp import solve_planar_pnp

DICTIONARY_VERSION = 1
DICTIONARY_SIZE = 50
GRID_CELLS = 6          # 4 payload cells + 1-cell border on each side
PAYLOAD_CELLS = 4
MIN_HAMMING = 4

# detector tuning
ADAPTIVE_WINDOW = 23
ADAPTIVE_OFFSET = 8.0
MIN_QUAD_AREA_PX = 64.0
MIN_QUAD_SIDE_PX = 6.0
CELL_SAMPLES = 3        # samples per cell axis when reading bits


@dataclass(frozen=True)
class MarkerDescriptor:
    id: int
    grid: np.ndarray                # (6, 6) uint8, 1 = white cell
    physical_size: float = 0.02    # meters

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.uint8)
        if g.shape != (GRID_CELLS, GRID_CELLS):
            raise ValueError(f"grid must be {GRID_CELLS}x{GRID_CELLS}")
        border = np.concatenate([g[0], g[-1], g[:, 0], g[:, -1]])
        if border.any():
            raise ValueError("marker border cells must be black")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)

    @property
    def payload(self) -> np.ndarray:
        return self.grid[1:-1, 1:-1]


@dataclass(frozen=True)
class MarkerDetection:
    id: int
    corners: np.ndarray             # (4, 2) pixels: marker TL first, clockwise
    decode_rotation: int            # 0 / 90 / 180 / 270

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=np.float64)
        if c.shape != (4, 2):
            raise ValueError("corners must be (4, 2)")
        c.setflags(write=False)
        object.__setattr__(self, "corners", c)


@dataclass(frozen=True)
class ClockCodebook:
    """Injective map from marker id to the time it was displayed."""

    times: dict[int, float]

    def __post_init__(self):
        vals = list(self.times.values())
        if len(set(vals)) != len(vals):
            raise ValueError("codebook display times must be unique")

    def __getitem__(self, marker_id: int) -> float:
        return self.times[marker_id]

    def __contains__(self, marker_id: int) -> bool:
        return marker_id in self.times


def _payload_from_bits(bits: int) -> np.ndarray:
    cells = np.array([(bits >> k) & 1 for k in range(16)], dtype=np.uint8)
    return cells.reshape(PAYLOAD_CELLS, PAYLOAD_CELLS)


def _grid_from_payload(payload: np.ndarray) -> np.ndarray:
    grid = np.zeros((GRID_CELLS, GRID_CELLS), dtype=np.uint8)
    grid[1:-1, 1:-1] = payload
    return grid


def _rotations(payload: np.ndarray) -> list[np.ndarray]:
    return [np.rot90(payload, k) for k in range(4)]


def generate_dictionary(size: int = DICTIONARY_SIZE, physical_size: float = 0.02) -> list[MarkerDescriptor]:
    """Deterministic rotation-unambiguous dictionary (see module docstring)."""
    rng = np.random.default_rng(DICTIONARY_VERSION * 0x5EED)
    order = rng.permutation(1 << (PAYLOAD_CELLS * PAYLOAD_CELLS))
    accepted: list[np.ndarray] = []      # flattened rotations of accepted markers
    markers: list[MarkerDescriptor] = []
    for bits in order:
        payload = _payload_from_bits(int(bits))
        pop = int(payload.sum())
        if pop < 3 or pop > 13:
            continue  # keep cell-threshold estimation well conditioned
        rots = [r.ravel() for r in _rotations(payload)]
        # rotation-unambiguous: the four rotations must be far from each
        # other and from every rotation of every accepted marker
        ok = all(
            int(np.sum(rots[i] != rots[j])) >= MIN_HAMMING
            for i in range(4)
            for j in range(i + 1, 4)
        ) and all(
            int(np.sum(r != prev)) >= MIN_HAMMING for r in rots for prev in accepted
        )
        if not ok:
            continue
        markers.append(
            MarkerDescriptor(id=len(markers), grid=_grid_from_payload(payload), physical_size=physical_size)
        )
        accepted.extend(rots)
        if len(markers) >= size:
            break
    if len(markers) < size:
        raise RuntimeError("payload space exhausted before filling the dictionary")
    return markers


_DEFAULT_DICTIONARY: list[MarkerDescriptor] | None = None


def default_dictionary() -> list[MarkerDescriptor]:
    global _DEFAULT_DICTIONARY
    if _DEFAULT_DICTIONARY is None:
        _DEFAULT_DICTIONARY = generate_dictionary()
    return _DEFAULT_DICTIONARY


# --- codec --------------------------------------------------------------------

def encode_marker(desc: MarkerDescriptor, pixels_per_cell: int) -> np.ndarray:
    """Axis-aligned marker raster, black border, uint8 grayscale."""
    if pixels_per_cell < 1:
        raise ValueError("pixels_per_cell must be >= 1")
    img = np.where(desc.grid > 0, 255, 0).astype(np.uint8)
    return np.kron(img, np.ones((pixels_per_cell, pixels_per_cell), dtype=np.uint8))


def export_dictionary(markers: list[MarkerDescriptor], path) -> None:
    """Plain-text bit-matrix file, one marker per block."""
    lines = [f"# marker dictionary version {DICTIONARY_VERSION}"]
    for m in markers:
        lines.append(f"marker {m.id} {m.physical_size:.6f}")
        for row in m.grid:
            lines.append("".join(str(int(b)) for b in row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def import_dictionary(path) -> list[MarkerDescriptor]:
    markers = []
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip() and not ln.startswith("#")]
    i = 0
    while i < len(lines):
        head = lines[i].split()
        if head[0] != "marker":
            raise ValueError(f"expected 'marker' header, got {lines[i]!r}")
        mid, size = int(head[1]), float(head[2])
        rows = [[int(ch) for ch in lines[i + 1 + r]] for r in range(GRID_CELLS)]
        markers.append(MarkerDescriptor(id=mid, grid=np.array(rows, dtype=np.uint8), physical_size=size))
        i += 1 + GRID_CELLS
    return markers


# --- detection ----------------------------------------------------------------

def _to_gray(img: np.ndarray) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim == 3:
        a = a.mean(axis=2)
    return a.astype(np.float64)


def _quad_is_convex(quad: np.ndarray) -> bool:
    crosses = []
    for i in range(4):
        a = quad[(i + 1) % 4] - quad[i]
        b = quad[(i + 2) % 4] - quad[(i + 1) % 4]
        crosses.append(np.cross(a, b))
    crosses = np.asarray(crosses)
    return bool(np.all(crosses > 0) or np.all(crosses < 0))


def _order_clockwise(quad: np.ndarray) -> np.ndarray:
    """Clockwise in image coordinates (y down), starting top-left-most."""
    c = quad.mean(axis=0)
    ang = np.arctan2(quad[:, 1] - c[1], quad[:, 0] - c[0])
    order = np.argsort(ang)  # CCW in math coords == CW on screen with y down
    quad = quad[order]
    start = int(np.argmin(quad.sum(axis=1)))
    return np.roll(quad, -start, axis=0)


def _quad_homography(quad: np.ndarray, cells: int) -> np.ndarray:
    """Map cell coordinates (x, y) in [0, cells] onto the image quad."""
    src = np.array([[0.0, 0.0], [cells, 0.0], [cells, cells], [0.0, cells]])
    a = []
    for (x, y), (u, v) in zip(src, quad):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    _, _, vt = np.linalg.svd(np.asarray(a))
    return vt[-1].reshape(3, 3)


def _sample_cells(gray: np.ndarray, quad: np.ndarray) -> np.ndarray:
    """Mean intensity per marker cell via the quad's unwarp homography."""
    hmat = _quad_homography(quad, GRID_CELLS)
    offs = (np.arange(CELL_SAMPLES) + 0.5) / CELL_SAMPLES * 0.6 + 0.2
    ox, oy = np.meshgrid(offs, offs)
    cells = np.empty((GRID_CELLS, GRID_CELLS))
    gx, gy = np.meshgrid(np.arange(GRID_CELLS), np.arange(GRID_CELLS))
    xs = (gx[..., None, None] + ox).reshape(-1)
    ys = (gy[..., None, None] + oy).reshape(-1)
    pts = np.stack([xs, ys, np.ones_like(xs)])
    mapped = hmat @ pts
    u = mapped[0] / mapped[2]
    v = mapped[1] / mapped[2]
    vals = _bilinear(gray, u, v).reshape(GRID_CELLS, GRID_CELLS, -1)
    cells = vals.mean(axis=2)
    return cells


def _edge_crossing(gray: np.ndarray, point: np.ndarray, normal: np.ndarray, half: float = 3.0, step: float = 0.25) -> float | None:
    """Sub-pixel offset of the intensity edge along ``normal`` at ``point``.

    Samples a short perpendicular intensity profile and returns where it
    crosses the midpoint between its extremes (linear interpolation
    between samples), or None when no clear edge is present. The
    mid-crossing is phase-robust where gradient centroids pick up
    correlated bias on grid-aligned edges.
    """
    s = np.arange(-half, half + 1e-9, step)
    xs = point[0] + s * normal[0]
    ys = point[1] + s * normal[1]
    h, w = gray.shape
    if xs.min() < 1 or xs.max() > w - 2 or ys.min() < 1 or ys.max() > h - 2:
        return None
    prof = _bilinear(gray, xs, ys)
    lo, hi = float(prof.min()), float(prof.max())
    if hi - lo < 30.0:
        return None
    mid = 0.5 * (lo + hi)
    signs = np.signbit(prof - mid)
    idx = np.where(signs[1:] != signs[:-1])[0]
    if len(idx) == 0:
        return None
    # the crossing nearest the expected edge position
    best = int(idx[np.argmin(np.abs(s[idx] + 0.5 * step))])
    y0, y1 = prof[best], prof[best + 1]
    if y1 == y0:
        return float(s[best])
    return float(s[best] + (mid - y0) / (y1 - y0) * step)


def refine_quad_edges(gray: np.ndarray, quad: np.ndarray) -> np.ndarray:
    """Refine quad corners by intersecting sub-pixel fitted side lines.

    Each side is sampled away from the corners, every sample snapped to
    the intensity edge along the side normal, and a TLS line fitted; the
    corner is the intersection of adjacent side lines. Falls back to the
    input corner when a side cannot be fitted.
    """
    lines = []
    for i in range(4):
        a, b = quad[i], quad[(i + 1) % 4]
        side = b - a
        length = np.linalg.norm(side)
        if length < 4.0:
            lines.append(None)
            continue
        direction = side / length
        normal = np.array([-direction[1], direction[0]])
        m = int(np.clip(length * 0.6 / 2.0, 4, 16))
        ts = np.linspace(0.2, 0.8, m)
        pts = []
        for t in ts:
            p = a + t * side
            off = _edge_crossing(gray, p, normal)
            if off is not None and abs(off) <= 2.0:
                pts.append(p + off * normal)
        if len(pts) < 3:
            lines.append(None)
            continue
        lines.append(_fit_line_tls(np.asarray(pts)))
    refined = quad.copy()
    for i in range(4):
        la = lines[(i - 1) % 4]
        lb = lines[i]
        if la is None or lb is None:
            continue
        x = _intersect_lines(la[0], la[1], lb[0], lb[1])
        if x is not None and np.linalg.norm(x - quad[i]) <= 4.0:
            refined[i] = x
    return refined


def refine_corner_subpixel(gray: np.ndarray, corner: np.ndarray) -> np.ndarray:
    """Peak of a quadratic fitted to the gradient magnitude in 5x5."""
    h, w = gray.shape
    ci = int(round(corner[0]))
    ri = int(round(corner[1]))
    if not (3 <= ci < w - 3 and 3 <= ri < h - 3):
        return corner
    patch = gray[ri - 3:ri + 4, ci - 3:ci + 4]
    gy, gx = np.gradient(patch)
    mag = np.hypot(gx, gy)[1:-1, 1:-1]   # 5x5 interior
    ys, xs = np.mgrid[-2:3, -2:3]
    a = np.column_stack([
        np.ones(25), xs.ravel(), ys.ravel(),
        xs.ravel() ** 2, xs.ravel() * ys.ravel(), ys.ravel() ** 2,
    ])
    coef, *_ = np.linalg.lstsq(a, mag.ravel(), rcond=None)
    _, b, c, d, e, f = coef
    hess = np.array([[2 * d, e], [e, 2 * f]])
    # only accept a proper maximum close to the integer estimate
    if np.linalg.det(hess) <= 0 or hess[0, 0] >= 0:
        return corner
    offset = np.linalg.solve(hess, -np.array([b, c]))
    if np.max(np.abs(offset)) > 1.5:
        return corner
    return corner + offset


def detect_markers(
    img: np.ndarray, dictionary: list[MarkerDescriptor] | None = None
) -> list[MarkerDetection]:
    """All dictionary markers found in a grayscale image."""
    if dictionary is None:
        dictionary = default_dictionary()
    gray = _to_gray(img)
    if gray.size == 0:
        return []
    dark = gray < (_local_mean(gray, ADAPTIVE_WINDOW) - ADAPTIVE_OFFSET)
    lookup = {}
    for m in dictionary:
        for k in range(4):
            lookup[np.rot90(m.payload, k).tobytes()] = (m.id, k)

    detections: list[MarkerDetection] = []
    seen_centers: list[tuple[int, np.ndarray]] = []
    for comp in _connected_components(dark, min_size=20):
        contour = trace_boundary(dark, component_top_left(comp))
        if len(contour) < 12:
            continue
        quad_rc = simplify_to_quad(contour)
        if quad_rc is None:
            continue
        quad = quad_rc[:, ::-1].astype(np.float64)  # (x, y)
        if not _quad_is_convex(quad):
            continue
        sides = np.linalg.norm(np.roll(quad, -1, axis=0) - quad, axis=1)
        area = _polygon_area(quad)
        if area < MIN_QUAD_AREA_PX or sides.min() < MIN_QUAD_SIDE_PX:
            continue
        quad = _order_clockwise(quad)
        # two passes: the second resamples perpendicular to the refined sides
        quad = refine_quad_edges(gray, refine_quad_edges(gray, quad))
        cells = _sample_cells(gray, quad)
        thresh = 0.5 * (cells.min() + cells.max())
        bits = (cells > thresh).astype(np.uint8)
        if bits[0].any() or bits[-1].any() or bits[:, 0].any() or bits[:, -1].any():
            continue
        hit = lookup.get(bits[1:-1, 1:-1].tobytes())
        if hit is None:
            continue
        mid, k = hit
        # the sampled payload equals rot90(canonical, k): the marker appears
        # rotated by 90k degrees CCW on screen; rolling the clockwise corner
        # list by -k brings the marker-frame top-left corner first
        corners = np.roll(quad, -k, axis=0)
        center = corners.mean(axis=0)
        if any(m == mid and np.linalg.norm(c - center) < 5.0 for m, c in seen_centers):
            continue
        seen_centers.append((mid, center))
        detections.append(MarkerDetection(id=mid, corners=corners, decode_rotation=(90 * k) % 360))
    return detections


def marker_object_points(size: float) -> np.ndarray:
    """Marker-frame corner coordinates matching canonical detection order.

    Marker frame: x right, y down (matching image axes at rotation 0),
    z out of the marker toward the camera; origin at the center.
    """
    s = size / 2.0
    return np.array([
        [-s, -s, 0.0],
        [s, -s, 0.0],
        [s, s, 0.0],
        [-s, s, 0.0],
    ])


def estimate_marker_pose(
    det: MarkerDetection, size: float, k: CameraIntrinsics
) -> RigidTransform:
    """Camera-from-marker transform minimizing corner reprojection error."""
    corners = np.asarray(det.corners, dtype=np.float64)
    centered = corners - corners.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[1] <= 1e-9 * max(1.0, s[0]):
        raise DegenerateCorners("marker corners are collinear")
    pose, _rms = solve_planar_pnp(marker_object_points(size), corners, k)
    return pose


def decode_clock(
    img: np.ndarray,
    codebook: ClockCodebook,
    dictionary: list[MarkerDescriptor] | None = None,
) -> float:
    """Display time of the clock marker visible in the frame."""
    detections = detect_markers(img, dictionary)
    if not detections:
        raise NoMarker("no clock marker in frame")
    for det in detections:
        if det.id in codebook:
            return codebook[det.id]
    raise UnknownId(f"marker id(s) {[d.id for d in detections]} not in codebook")
