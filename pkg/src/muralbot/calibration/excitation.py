"""Excitation trajectories for the two calibration stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from ..artwork import TimedTrajectory, retime
from ..errors import PreconditionError

Array = np.ndarray


@dataclass(frozen=True)
class GridExcitation:
    vertices: Array  # (m, 2) serpentine visit order
    trajectory: TimedTrajectory


def generate_grid_excitation(
    lo: Array,
    hi: Array,
    spacing: float,
    v_max: float = 0.25,
    a_max: float = 0.5,
    dt: float = 0.001,
) -> GridExcitation:
    """Boustrophedon sweep of a grid over [lo, hi], retimed for dynamics.

    Grid pitch is shrunk (never stretched) to land exactly on the
    workspace edges, so the sweep spans 100% of both axes.  Raises for
    spacing larger than the workspace or a degenerate rectangle.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    span = hi - lo
    if spacing <= 0:
        raise PreconditionError("spacing must be positive")
    if np.any(span <= 0):
        raise PreconditionError("workspace rectangle is degenerate")
    if spacing > max(span):
        raise PreconditionError(f"spacing {spacing} exceeds workspace span {span}")

    counts = [int(np.ceil(s / spacing - 1e-9)) + 1 for s in span]
    xs = np.linspace(lo[0], hi[0], counts[0])
    ys = np.linspace(lo[1], hi[1], counts[1])
    vertices = []
    for i, y in enumerate(ys):
        row = xs if i % 2 == 0 else xs[::-1]
        vertices.extend((x, y) for x in row)
    vertices = np.asarray(vertices)
    return GridExcitation(vertices, retime(vertices, v_max, a_max, dt))


def synth_drag_path(
    lo: Array,
    hi: Array,
    duration: float,
    rate: float,
    rng: np.random.Generator,
    n_waypoints: int | None = None,
) -> Array:
    """Smooth random operator-drag path inside [lo, hi], sampled at ``rate``.

    Stand-in for the compliant-mode stage-1 data collection: a person
    walking the platform around the reachable region.  Cubic spline
    through random waypoints, clipped to the rectangle.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if n_waypoints is None:
        n_waypoints = max(int(duration / 2.5), 4)
    t_way = np.linspace(0.0, duration, n_waypoints)
    waypoints = rng.uniform(lo, hi, size=(n_waypoints, 2))
    spline = CubicSpline(t_way, waypoints, axis=0)
    t = np.arange(0.0, duration, 1.0 / rate)
    path = spline(t)
    return np.clip(path, lo, hi)
