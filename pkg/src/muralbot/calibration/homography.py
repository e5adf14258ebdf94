"""Piecewise homography task-space correction.

Each rectangular section of the (true-coordinate) canvas gets a 3x3
projective map H fitted to its 4 corner correspondences, taking true
canvas positions to the robot's internally-estimated positions.
Commanded trajectories are warped through the map before tracking, so
the control loop keeps running on uncorrected estimates.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import configio
from ..errors import DegenerateConfigurationError, OutOfMapError, PreconditionError

Array = np.ndarray

EDGE_EPSILON = 1e-3  # m, out-of-map tolerance


def _three_collinear(pts: Array, tol: float = 1e-9) -> bool:
    for i in range(4):
        a, b, c = [pts[j] for j in range(4) if j != i][:3]
        area = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        scale = max(np.abs(pts).max(), 1.0)
        if area < tol * scale * scale:
            return True
    return False


def fit_homography(true_corners: Array, measured_corners: Array) -> Array:
    """Direct linear transform from exactly 4 correspondences.

    Returns H normalized to H[2,2] = 1, mapping homogeneous true points
    to measured points.  Raises DegenerateConfigurationError when any 3
    corners are collinear in either set.
    """
    T = np.asarray(true_corners, dtype=float)
    M = np.asarray(measured_corners, dtype=float)
    if T.shape != (4, 2) or M.shape != (4, 2):
        raise PreconditionError("need exactly 4 corner correspondences")
    if _three_collinear(T) or _three_collinear(M):
        raise DegenerateConfigurationError("3 corners are collinear; homography undefined")
    A = np.zeros((8, 9))
    for i in range(4):
        x, y = T[i]
        u, v = M[i]
        A[2 * i] = [-x, -y, -1, 0, 0, 0, u * x, u * y, u]
        A[2 * i + 1] = [0, 0, 0, -x, -y, -1, v * x, v * y, v]
    _, _, Vt = np.linalg.svd(A)
    H = Vt[-1].reshape(3, 3)
    if abs(H[2, 2]) < 1e-14:
        raise DegenerateConfigurationError("homography has vanishing normalization")
    return H / H[2, 2]


def apply_homography(H: Array, points: Array) -> Array:
    """Apply with homogeneous normalization; points (..., 2)."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
    out = hom @ H.T
    out = out[:, :2] / out[:, 2:3]
    return out[0] if single else out


@dataclass(frozen=True)
class HomographyMap:
    """Axis-aligned grid of sections over the painting region.

    xs (c,), ys (r,): section boundaries in true coordinates;
    H: (r-1, c-1, 3, 3) per-cell matrices mapping true -> measured;
    true_grid / measured_grid: the (r, c, 2) input correspondences.
    """

    xs: Array
    ys: Array
    H: Array
    true_grid: Array
    measured_grid: Array

    @property
    def n_sections(self) -> int:
        return (len(self.ys) - 1) * (len(self.xs) - 1)

    def section_of(self, point) -> tuple[int, int]:
        """(row, col) of the section owning ``point``.

        Boundary points tie to the lower-left section; points outside
        every section by more than EDGE_EPSILON raise OutOfMapError.
        """
        px, py = float(point[0]), float(point[1])
        if (
            px < self.xs[0] - EDGE_EPSILON
            or px > self.xs[-1] + EDGE_EPSILON
            or py < self.ys[0] - EDGE_EPSILON
            or py > self.ys[-1] + EDGE_EPSILON
        ):
            raise OutOfMapError(f"point ({px:.4f}, {py:.4f}) outside the calibrated region")
        col = int(np.searchsorted(self.xs, px, side="left")) - 1
        row = int(np.searchsorted(self.ys, py, side="left")) - 1
        col = min(max(col, 0), len(self.xs) - 2)
        row = min(max(row, 0), len(self.ys) - 2)
        return row, col

    def warp(self, point) -> Array:
        row, col = self.section_of(point)
        return apply_homography(self.H[row, col], point)

    def warp_inverse(self, point) -> Array:
        """Measured -> true, searching sections by their true pre-image."""
        # invert each candidate cell's H; accept the cell whose pre-image
        # lands inside it (boundary-tolerant)
        best = None
        for row in range(self.H.shape[0]):
            for col in range(self.H.shape[1]):
                pre = apply_homography(np.linalg.inv(self.H[row, col]), point)
                if (
                    self.xs[col] - EDGE_EPSILON <= pre[0] <= self.xs[col + 1] + EDGE_EPSILON
                    and self.ys[row] - EDGE_EPSILON <= pre[1] <= self.ys[row + 1] + EDGE_EPSILON
                ):
                    d = 0.0  # inside: perfect candidate
                    return pre
                if best is None:
                    best = pre
        return best


def build_piecewise_map(true_grid: Array, measured_grid: Array) -> HomographyMap:
    """One homography per grid cell from an r x c correspondence grid.

    true_grid must be an axis-aligned grid (rows share y, columns share
    x); adjacent cells share their 2 edge corners exactly, which pins
    both maps to identical values at those points.  Raises
    PreconditionError listing holes when grid entries are non-finite.
    """
    T = np.asarray(true_grid, dtype=float)
    M = np.asarray(measured_grid, dtype=float)
    if T.ndim != 3 or T.shape[2] != 2 or T.shape != M.shape:
        raise PreconditionError("grids must both be (r, c, 2)")
    r, c = T.shape[:2]
    if r < 2 or c < 2:
        raise PreconditionError("grid needs at least 2 x 2 points")
    holes = [(i, j) for i in range(r) for j in range(c)
             if not (np.all(np.isfinite(T[i, j])) and np.all(np.isfinite(M[i, j])))]
    if holes:
        raise PreconditionError(f"grid has missing points at {holes}")
    xs = T[0, :, 0]
    ys = T[:, 0, 1]
    if not (np.allclose(T[..., 0], xs[None, :], atol=1e-9) and np.allclose(T[..., 1], ys[:, None], atol=1e-9)):
        raise PreconditionError("true grid is not axis-aligned")
    if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
        raise PreconditionError("true grid coordinates must be strictly increasing")

    H = np.zeros((r - 1, c - 1, 3, 3))
    for i in range(r - 1):
        for j in range(c - 1):
            corners_t = np.array([T[i, j], T[i, j + 1], T[i + 1, j + 1], T[i + 1, j]])
            corners_m = np.array([M[i, j], M[i, j + 1], M[i + 1, j + 1], M[i + 1, j]])
            H[i, j] = fit_homography(corners_t, corners_m)
    return HomographyMap(xs=xs, ys=ys, H=H, true_grid=T, measured_grid=M)


def warp_point(hmap: HomographyMap, point) -> Array:
    return hmap.warp(point)


def warp_point_inverse(hmap: HomographyMap, point) -> Array:
    return hmap.warp_inverse(point)


def warp_trajectory(hmap: HomographyMap, positions: Array) -> Array:
    """Warp a trajectory into the robot's estimated frame, per-point.

    Timestamps are untouched by construction (same sample count);
    velocities should be re-derived by differencing afterwards.
    """
    pts = np.asarray(positions, dtype=float)
    out = np.empty_like(pts)
    for k, p in enumerate(pts):
        out[k] = hmap.warp(p)
    return out


def save_homography_map(path: str | Path, hmap: HomographyMap) -> None:
    configio.write_tagged(
        path,
        "homography-map",
        {
            "true_grid_m": hmap.true_grid.tolist(),
            "measured_grid_m": hmap.measured_grid.tolist(),
            "sections": [
                {
                    "rect_m": [
                        float(hmap.xs[j]), float(hmap.ys[i]),
                        float(hmap.xs[j + 1]), float(hmap.ys[i + 1]),
                    ],
                    "H_row_major": hmap.H[i, j].reshape(-1).tolist(),
                }
                for i in range(hmap.H.shape[0])
                for j in range(hmap.H.shape[1])
            ],
        },
    )


def load_homography_map(path: str | Path) -> HomographyMap:
    doc = configio.read_tagged(path, "homography-map")
    hmap = build_piecewise_map(
        np.array(doc["true_grid_m"], dtype=float),
        np.array(doc["measured_grid_m"], dtype=float),
    )
    # cross-check the stored matrices against the rebuilt ones
    stored = np.array([s["H_row_major"] for s in doc["sections"]], dtype=float)
    rebuilt = hmap.H.reshape(-1, 9)
    if not np.allclose(stored, rebuilt, atol=1e-6):
        raise PreconditionError(f"{path}: stored homographies disagree with grid points")
    return hmap
