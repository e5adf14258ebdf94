"""Scanline hatch infill for simple polygons."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Array = np.ndarray


def polygon_area(pts: Array) -> float:
    """Signed shoelace area."""
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def point_in_polygon(point, pts: Array) -> bool:
    """Ray-casting test (boundary points count as inside)."""
    x, y = float(point[0]), float(point[1])
    inside = False
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        # on-edge check
        dx, dy = x2 - x1, y2 - y1
        cross = dx * (y - y1) - dy * (x - x1)
        if abs(cross) < 1e-12 and min(x1, x2) - 1e-12 <= x <= max(x1, x2) + 1e-12 and min(
            y1, y2
        ) - 1e-12 <= y <= max(y1, y2) + 1e-12:
            return True
        if (y1 > y) != (y2 > y):
            x_int = x1 + (y - y1) * dx / dy
            if x_int > x:
                inside = not inside
    return inside


def _segments_intersect(p1, p2, q1, q2) -> bool:
    """Proper intersection test (shared endpoints do not count)."""
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def polygon_is_simple(pts: Array) -> bool:
    n = len(pts)
    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            b1, b2 = pts[j], pts[(j + 1) % n]
            if _segments_intersect(a1, a2, b1, b2):
                return False
    return True


def _scanline_hits(pts: Array, y: float) -> list[float]:
    """Sorted x-intersections of the horizontal line at y with the polygon."""
    hits = []
    n = len(pts)
    for i in range(n):
        y1, y2 = pts[i, 1], pts[(i + 1) % n, 1]
        if (y1 > y) == (y2 > y):
            continue
        x1, x2 = pts[i, 0], pts[(i + 1) % n, 0]
        hits.append(x1 + (y - y1) * (x2 - x1) / (y2 - y1))
    hits.sort()
    return hits


def _connector_inside(pts: Array, a, b) -> bool:
    mid = (np.asarray(a) + np.asarray(b)) / 2.0
    if not point_in_polygon(mid, pts):
        return False
    n = len(pts)
    for i in range(n):
        if _segments_intersect(a, b, pts[i], pts[(i + 1) % n]):
            return False
    return True


@dataclass(frozen=True)
class InfillResult:
    polylines: list  # list of (m, 2) arrays
    used_centerline_fallback: bool = False


def generate_infill(polygon: Array, stepover: float, angle: float = 0.0) -> InfillResult:
    """Parallel hatch lines spaced ``stepover`` apart, clipped to the
    polygon and chained serpentine-fashion where the connector stays
    inside.  First/last lines are inset by stepover/2 from the extent.

    A polygon thinner than the stepover gets a single centerline pass,
    flagged on the result.  Degenerate (zero-area) polygons yield no
    output.
    """
    if stepover <= 0:
        raise ValueError("stepover must be positive")
    pts = np.asarray(polygon, dtype=float)
    if len(pts) < 3 or abs(polygon_area(pts)) < 1e-12:
        return InfillResult([], False)

    c, s = np.cos(-angle), np.sin(-angle)
    R = np.array([[c, -s], [s, c]])
    rot = pts @ R.T  # scan in the rotated frame, horizontal lines

    y_lo, y_hi = rot[:, 1].min(), rot[:, 1].max()
    extent = y_hi - y_lo
    if extent <= stepover:
        ys = [0.5 * (y_lo + y_hi)]
        fallback = True
    else:
        # floor(extent/stepover)+1 lines, half-stepover insets, the last
        # clamped back inside (dropped when it collides with its neighbor)
        count = int(np.floor(extent / stepover)) + 1
        ys = [y_lo + stepover / 2.0 + k * stepover for k in range(count)]
        limit = y_hi - stepover / 2.0
        ys = [min(y, limit) for y in ys]
        dedup = [ys[0]]
        for y in ys[1:]:
            if y - dedup[-1] > 1e-9:
                dedup.append(y)
        ys = dedup
        fallback = False

    rows = []  # per scanline: list of (x_start, x_end) intervals
    for y in ys:
        hits = _scanline_hits(rot, y)
        intervals = [(hits[i], hits[i + 1]) for i in range(0, len(hits) - 1, 2)]
        rows.append((y, intervals))

    # serpentine chaining: walk rows, flip direction each line, merge if
    # the connector stays inside the polygon
    chains: list[list] = []
    current: list = []
    prev_end = None
    direction = 1
    for y, intervals in rows:
        if len(intervals) != 1:
            # concave row splits: close the running chain, emit rows as
            # independent passes
            if current:
                chains.append(current)
                current = []
                prev_end = None
            for x0, x1 in intervals:
                chains.append([np.array([x0, y]), np.array([x1, y])])
            direction = 1
            continue
        x0, x1 = intervals[0]
        a = np.array([x0 if direction > 0 else x1, y])
        b = np.array([x1 if direction > 0 else x0, y])
        if current and prev_end is not None and _connector_inside(rot, prev_end, a):
            current.extend([a, b])
        else:
            if current:
                chains.append(current)
            current = [a, b]
        prev_end = b
        direction = -direction
    if current:
        chains.append(current)

    Rinv = np.array([[c, s], [-s, c]])
    polylines = [np.asarray(chain) @ Rinv.T for chain in chains if len(chain) >= 2]
    return InfillResult(polylines, fallback)
