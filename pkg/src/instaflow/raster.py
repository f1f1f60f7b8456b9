"""Small software-rasterization primitives.

Pixel ``(row, col)`` is sampled at its center ``(u, v) = (col + 0.5, row + 0.5)``.
A pixel belongs to a convex polygon when its center lies inside or on the
boundary. Polygons with zero area cover nothing.
"""
from __future__ import annotations

import numpy as np


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull (in u-right, v-down pixel axes: clockwise on screen).

    Andrew's monotone chain; collinear points are dropped. Returns a (K, 2)
    array, K may be < 3 for degenerate input.
    """
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def convex_mask(hull: np.ndarray, height: int, width: int) -> tuple[np.ndarray, slice, slice] | None:
    """Coverage of a CCW convex polygon, restricted to its bounding box.

    Returns ``(mask, rows, cols)`` where ``mask`` is the boolean coverage of
    ``image[rows, cols]``, or None when nothing is covered.
    """
    if len(hull) < 3 or polygon_area(hull) <= 0.0:
        return None
    lo = np.floor(hull.min(axis=0) - 0.5)
    hi = np.ceil(hull.max(axis=0) - 0.5)
    c0, r0 = max(int(lo[0]), 0), max(int(lo[1]), 0)
    c1, r1 = min(int(hi[0]), width - 1), min(int(hi[1]), height - 1)
    if c0 > c1 or r0 > r1:
        return None
    u = np.arange(c0, c1 + 1, dtype=np.float64) + 0.5
    v = np.arange(r0, r1 + 1, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v)
    mask = np.ones(uu.shape, dtype=bool)
    nxt = np.roll(hull, -1, axis=0)
    for (ax, ay), (bx, by) in zip(hull, nxt):
        mask &= (bx - ax) * (vv - ay) - (by - ay) * (uu - ax) >= 0.0
    if not mask.any():
        return None
    return mask, slice(r0, r1 + 1), slice(c0, c1 + 1)


def fill_convex(image: np.ndarray, points: np.ndarray, value) -> None:
    """Paint the convex hull of ``points`` into ``image`` in place."""
    cov = convex_mask(convex_hull(points), image.shape[0], image.shape[1])
    if cov is None:
        return
    mask, rows, cols = cov
    image[rows, cols][mask] = value


def _clip_segment(p0, p1, xmin, ymin, xmax, ymax):
    """Liang-Barsky clip; returns clipped endpoints or None."""
    (x0, y0), (x1, y1) = p0, p1
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 - xmin), (dx, xmax - x0), (-dy, y0 - ymin), (dy, ymax - y0)):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    return (x0 + t0 * dx, y0 + t0 * dy), (x0 + t1 * dx, y0 + t1 * dy)


def draw_segment(image: np.ndarray, p0, p1, value) -> None:
    """Draw a 1-pixel line between two (u, v) points, clipped to the image."""
    h, w = image.shape[:2]
    if not (np.all(np.isfinite(p0)) and np.all(np.isfinite(p1))):
        return
    clipped = _clip_segment(p0, p1, 0.0, 0.0, w - 1e-9, h - 1e-9)
    if clipped is None:
        return
    (x0, y0), (x1, y1) = clipped
    n = int(np.ceil(max(abs(x1 - x0), abs(y1 - y0)))) + 1
    ts = np.linspace(0.0, 1.0, n + 1)
    cols = np.clip(np.floor(x0 + ts * (x1 - x0)).astype(int), 0, w - 1)
    rows = np.clip(np.floor(y0 + ts * (y1 - y0)).astype(int), 0, h - 1)
    image[rows, cols] = value
