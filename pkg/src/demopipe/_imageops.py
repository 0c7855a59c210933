"""Shared low-level raster utilities for the detection pipelines.

Connected components use run-length labeling with union-find so that
640x480 frames stay well inside the per-frame reconstruction budget.
"""

from __future__ import annotations

import numpy as np


def local_mean(img: np.ndarray, window: int) -> np.ndarray:
    """Box-filter mean with edge-replicated borders via an integral image."""
    r = window // 2
    padded = np.pad(img, r + 1, mode="edge")
    integ = padded.cumsum(axis=0, dtype=np.float64).cumsum(axis=1)
    h, w = img.shape
    s = (
        integ[window:window + h, window:window + w]
        - integ[:h, window:window + w]
        - integ[window:window + h, :w]
        + integ[:h, :w]
    )
    return s / float(window * window)


def bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = img.shape
    x = np.clip(x, 0.0, w - 1.001)
    y = np.clip(y, 0.0, h - 1.001)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    fx = x - x0
    fy = y - y0
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x0 + 1] * fx * (1 - fy)
        + img[y0 + 1, x0] * (1 - fx) * fy
        + img[y0 + 1, x0 + 1] * fx * fy
    )


class _UnionFind:
    def __init__(self):
        self.parent: list[int] = []

    def make(self) -> int:
        self.parent.append(len(self.parent))
        return len(self.parent) - 1

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _label_runs(mask: np.ndarray, connectivity: int) -> tuple[_UnionFind, list[tuple[int, int, int, int]]]:
    h, w = mask.shape
    uf = _UnionFind()
    reach = 1 if connectivity == 8 else 0
    # all run boundaries in one vectorized pass over the padded mask
    padded = np.zeros((h, w + 2), dtype=np.int8)
    padded[:, 1:-1] = mask
    d = np.diff(padded, axis=1)
    srow, scol = np.nonzero(d == 1)
    erow, ecol = np.nonzero(d == -1)
    # starts and ends pair up in scan order within each row
    run_rows: list[tuple[int, int, int, int]] = []
    prev_runs: list[tuple[int, int, int]] = []
    prev_row = -2
    cur_runs: list[tuple[int, int, int]] = []
    for r, c0, c1 in zip(srow, scol, ecol):
        if r != prev_row:
            prev_runs = cur_runs if r == prev_row + 1 else []
            cur_runs = []
            prev_row = r
        label = None
        for p0, p1, plabel in prev_runs:
            # runs are half-open [start, end); 8-connectivity admits
            # diagonal contact, which dilates the test interval by 1
            if p0 < c1 + reach and c0 < p1 + reach:
                if label is None:
                    label = plabel
                else:
                    uf.union(label, plabel)
        if label is None:
            label = uf.make()
        cur_runs.append((c0, c1, label))
        run_rows.append((r, c0, c1, label))
    return uf, run_rows


def connected_components(mask: np.ndarray, min_size: int = 1, connectivity: int = 8) -> list[np.ndarray]:
    """Connected foreground components as (N, 2) arrays of (row, col).

    Row runs are labeled and merged with union-find; cost scales with the
    number of runs rather than pixels.
    """
    uf, run_rows = _label_runs(mask, connectivity)
    groups: dict[int, list[np.ndarray]] = {}
    for r, c0, c1, label in run_rows:
        root = uf.find(label)
        cols = np.arange(c0, c1)
        rows = np.full(c1 - c0, r)
        groups.setdefault(root, []).append(np.column_stack([rows, cols]))
    comps = [np.concatenate(g) for g in groups.values()]
    return [c for c in comps if len(c) >= min_size]


def count_components(mask: np.ndarray, connectivity: int = 4) -> int:
    uf, run_rows = _label_runs(mask, connectivity)
    return len({uf.find(label) for _, _, _, label in run_rows})


_MOORE = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def trace_boundary(mask: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    """Moore-neighbor boundary trace from the component's topmost-leftmost
    pixel, clockwise in image coordinates. Stops when the start pixel is
    about to be exited along the first move again. Returns (N, 2) (row, col)."""
    h, w = mask.shape

    def on(p):
        return 0 <= p[0] < h and 0 <= p[1] < w and mask[p[0], p[1]]

    contour = [start]
    cur = start
    last_move = 2  # pretend we arrived heading east; first scan points north
    first_move = None
    for _ in range(4 * mask.size):
        found = False
        for k in range(8):
            d = (last_move + 6 + k) % 8
            cand = (cur[0] + _MOORE[d][0], cur[1] + _MOORE[d][1])
            if on(cand):
                if cur == start and first_move is not None and d == first_move:
                    return np.array(contour[:-1] if contour[-1] == start else contour)
                if first_move is None:
                    first_move = d
                contour.append(cand)
                cur = cand
                last_move = d
                found = True
                break
        if not found:
            return np.array(contour)
    return np.array(contour)


def component_top_left(comp: np.ndarray) -> tuple[int, int]:
    idx = np.lexsort((comp[:, 1], comp[:, 0]))
    return tuple(comp[idx[0]])


def has_hole(mask: np.ndarray, comp: np.ndarray) -> bool:
    """True when the component encloses background (ring-like shape).

    The background inside the component's padded bounding box splits into
    more than one connected piece exactly when the component encloses a
    hole. Background connectivity is 4-ish under the run labeler, which
    is the right dual for an 8-connected foreground.
    """
    r0, c0 = comp.min(axis=0)
    r1, c1 = comp.max(axis=0)
    sub = np.zeros((r1 - r0 + 3, c1 - c0 + 3), dtype=bool)
    sub[comp[:, 0] - r0 + 1, comp[:, 1] - c0 + 1] = True
    return count_components(~sub, connectivity=4) > 1


def rdp_open(points: np.ndarray, eps: float) -> np.ndarray:
    """Ramer-Douglas-Peucker on an open polyline."""
    if len(points) < 3:
        return points
    keep = np.zeros(len(points), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(points) - 1)]
    while stack:
        s, e = stack.pop()
        if e <= s + 1:
            continue
        seg = points[e] - points[s]
        seg_len = np.linalg.norm(seg)
        if seg_len < 1e-12:
            d = np.linalg.norm(points[s + 1:e] - points[s], axis=1)
        else:
            d = np.abs(np.cross(seg, points[s + 1:e] - points[s])) / seg_len
        imax = int(np.argmax(d))
        if d[imax] > eps:
            keep[s + 1 + imax] = True
            stack.append((s, s + 1 + imax))
            stack.append((s + 1 + imax, e))
    return points[keep]


def rdp_closed(points: np.ndarray, eps: float) -> np.ndarray:
    """RDP for a closed polygon: split at the two mutually farthest points."""
    n = len(points)
    if n <= 4:
        return points
    d = np.linalg.norm(points - points[0], axis=1)
    far1 = int(np.argmax(d))
    d = np.linalg.norm(points - points[far1], axis=1)
    far2 = int(np.argmax(d))
    i, j = sorted((far1, far2))
    half1 = rdp_open(points[i:j + 1], eps)
    half2 = rdp_open(np.vstack([points[j:], points[:i + 1]]), eps)
    return np.vstack([half1[:-1], half2[:-1]])


def simplify_to_quad(contour: np.ndarray, max_eps: float = 40.0) -> np.ndarray | None:
    """Raise the closed-RDP tolerance until exactly four vertices remain."""
    pts = contour.astype(np.float64)
    eps = 1.0
    while eps <= max_eps:
        approx = rdp_closed(pts, eps)
        if len(approx) == 4:
            return approx
        if len(approx) < 4:
            return None
        eps *= 1.4
    return None


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def fit_line_tls(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Total-least-squares line; returns (point_on_line, unit_direction)."""
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c)
    return c, vt[0]


def intersect_lines(p1, d1, p2, d2) -> np.ndarray | None:
    a = np.column_stack([d1, -d2])
    if abs(np.linalg.det(a)) < 1e-9:
        return None
    t = np.linalg.solve(a, p2 - p1)
    return p1 + t[0] * d1
