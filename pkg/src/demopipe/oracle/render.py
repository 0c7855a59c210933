"""Geometric rasterizers for synthetic camera frames.

Rendering is geometric, not photorealistic: the downstream pipeline
consumes edges and marker cells, so anti-aliased flat shading is all the
fidelity the tests need. Every renderer is deterministic.
"""

from __future__ import annotations

import numpy as np

from ..fiducial import MarkerDescriptor, encode_marker, marker_object_points, GRID_CELLS
from ..geometry import CameraIntrinsics, RigidTransform


def project_polyline(points_3d: np.ndarray, pose: RigidTransform, k: CameraIntrinsics) -> np.ndarray:
    """Project world/CAD points through pose (camera-from-frame) to pixels."""
    cam = pose.apply(np.asarray(points_3d, dtype=np.float64))
    z = cam[:, 2]
    if np.any(z <= 1e-6):
        raise ValueError("polyline reaches behind the camera")
    return np.column_stack([k.fx * cam[:, 0] / z + k.cx, k.fy * cam[:, 1] / z + k.cy])


def render_polylines(
    shape: tuple[int, int],
    polylines: list[np.ndarray],
    sigma: float = 0.9,
    peak: int = 255,
    background: int = 0,
    canvas: np.ndarray | None = None,
) -> np.ndarray:
    """Bright anti-aliased curves on a dark background.

    Each segment contributes a Gaussian cross-section profile; overlapping
    strokes combine with max, keeping intensities bounded.
    """
    h, w = shape
    if canvas is None:
        out = np.full((h, w), float(background))
    else:
        out = canvas.astype(np.float64)
    reach = int(np.ceil(3.0 * sigma)) + 1
    for poly in polylines:
        poly = np.asarray(poly, dtype=np.float64)
        for a, b in zip(poly[:-1], poly[1:]):
            x0 = int(np.floor(min(a[0], b[0]))) - reach
            x1 = int(np.ceil(max(a[0], b[0]))) + reach
            y0 = int(np.floor(min(a[1], b[1]))) - reach
            y1 = int(np.ceil(max(a[1], b[1]))) + reach
            x0, x1 = max(x0, 0), min(x1, w - 1)
            y0, y1 = max(y0, 0), min(y1, h - 1)
            if x1 < x0 or y1 < y0:
                continue
            xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
            d = b - a
            len2 = float(d @ d)
            px = xs - a[0]
            py = ys - a[1]
            if len2 < 1e-12:
                dist2 = px * px + py * py
            else:
                t = np.clip((px * d[0] + py * d[1]) / len2, 0.0, 1.0)
                dx = px - t * d[0]
                dy = py - t * d[1]
                dist2 = dx * dx + dy * dy
            vals = peak * np.exp(-dist2 / (2.0 * sigma * sigma))
            region = out[y0:y1 + 1, x0:x1 + 1]
            np.maximum(region, vals, out=region)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def render_marker_view(
    desc: MarkerDescriptor,
    pose: RigidTransform,
    k: CameraIntrinsics,
    canvas: np.ndarray | None = None,
    background: int = 255,
    supersample: int = 4,
    quiet_zone_cells: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Perspective render of one marker.

    pose is camera-from-marker; the marker occupies the z=0 square of its
    frame (x right, y down). Returns (image, true_corners) where
    true_corners are the exact projected outer-corner pixels in canonical
    (top-left first, clockwise in marker frame) order.
    """
    if canvas is None:
        img = np.full((k.height, k.width), float(background))
    else:
        img = canvas.astype(np.float64)
    size = desc.physical_size
    cell = size / GRID_CELLS
    half = size / 2.0 + quiet_zone_cells * cell

    r = pose.rotation_matrix
    hmat = k.matrix @ np.column_stack([r[:, 0], r[:, 1], pose.translation])
    hinv = np.linalg.inv(hmat)

    # painted footprint: marker plus quiet zone
    zone = np.array([[-half, -half, 0], [half, -half, 0], [half, half, 0], [-half, half, 0]])
    zone_px = project_polyline(zone, pose, k)
    x0 = max(int(np.floor(zone_px[:, 0].min())) - 1, 0)
    x1 = min(int(np.ceil(zone_px[:, 0].max())) + 1, k.width - 1)
    y0 = max(int(np.floor(zone_px[:, 1].min())) - 1, 0)
    y1 = min(int(np.ceil(zone_px[:, 1].max())) + 1, k.height - 1)
    if x1 < x0 or y1 < y0:
        raise ValueError("marker projects outside the image")

    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    ox, oy = np.meshgrid(offs, offs)
    xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    acc = np.zeros(xs.shape, dtype=np.float64)
    cover = np.zeros(xs.shape, dtype=np.float64)
    grid = desc.grid
    for dx, dy in zip(ox.ravel(), oy.ravel()):
        u = xs + dx
        v = ys + dy
        denom = hinv[2, 0] * u + hinv[2, 1] * v + hinv[2, 2]
        mx = (hinv[0, 0] * u + hinv[0, 1] * v + hinv[0, 2]) / denom
        my = (hinv[1, 0] * u + hinv[1, 1] * v + hinv[1, 2]) / denom
        inside_zone = (np.abs(mx) <= half) & (np.abs(my) <= half)
        inside_marker = (np.abs(mx) <= size / 2) & (np.abs(my) <= size / 2)
        col = np.floor((mx + size / 2) / cell).astype(int)
        row = np.floor((my + size / 2) / cell).astype(int)
        col = np.clip(col, 0, GRID_CELLS - 1)
        row = np.clip(row, 0, GRID_CELLS - 1)
        shade = np.where(grid[row, col] > 0, 255.0, 0.0)
        shade = np.where(inside_marker, shade, 255.0)  # quiet zone is white
        acc += np.where(inside_zone, shade, 0.0)
        cover += inside_zone.astype(np.float64)
    n = supersample * supersample
    frac = cover / n
    painted = acc / n
    region = img[y0:y1 + 1, x0:x1 + 1]
    img[y0:y1 + 1, x0:x1 + 1] = painted + (1.0 - frac) * region

    true_corners = project_polyline(marker_object_points(size), pose, k)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), true_corners


def render_clock_frame(
    desc: MarkerDescriptor,
    shape: tuple[int, int] = (160, 160),
    pixels_per_cell: int = 16,
    margin: int = 20,
) -> np.ndarray:
    """Axis-aligned screen capture of one clock marker on white."""
    h, w = shape
    img = np.full((h, w), 255, dtype=np.uint8)
    patch = encode_marker(desc, pixels_per_cell)
    ph, pw = patch.shape
    if ph + margin > h or pw + margin > w:
        raise ValueError("marker does not fit the frame")
    r0 = (h - ph) // 2
    c0 = (w - pw) // 2
    img[r0:r0 + ph, c0:c0 + pw] = patch
    return img
