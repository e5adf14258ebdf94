"""Arc-length retiming with trapezoidal speed profiles.

Every leg of a polyline runs a stop-to-stop trapezoid (or triangle when
too short to reach cruise speed).  Stopping at the vertices is what
makes the *sampled* trajectory feasible: a nonzero corner speed is a
velocity-direction jump, and the finite-difference acceleration across
such a jump scales like v_corner/dt, which violates any finite limit.
Collinear vertices (turn angle ~ 0) merge into one leg and keep cruise
speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import PreconditionError

Array = np.ndarray

_COLLINEAR_TOL = 1e-9  # rad


def trapezoid_duration(length: float, v_max: float, a_max: float) -> float:
    """Closed-form stop-to-stop duration for one straight leg."""
    if length <= 0:
        return 0.0
    if length >= v_max * v_max / a_max:
        return 2.0 * v_max / a_max + (length - v_max * v_max / a_max) / v_max
    return 2.0 * np.sqrt(length / a_max)


def _leg_position(s_total: float, t: float, v_max: float, a_max: float) -> float:
    """Arc length covered at time t within a stop-to-stop leg."""
    if s_total >= v_max * v_max / a_max:
        t_acc = v_max / a_max
        t_cruise = (s_total - v_max * v_max / a_max) / v_max
    else:
        t_acc = np.sqrt(s_total / a_max)
        t_cruise = 0.0
        v_max = a_max * t_acc
    t_total = 2 * t_acc + t_cruise
    t = min(max(t, 0.0), t_total)
    if t <= t_acc:
        return 0.5 * a_max * t * t
    if t <= t_acc + t_cruise:
        return 0.5 * a_max * t_acc * t_acc + v_max * (t - t_acc)
    td = t_total - t
    return s_total - 0.5 * a_max * td * td


@dataclass(frozen=True)
class TimedTrajectory:
    times: Array  # (k,), strictly increasing, uniform dt
    positions: Array  # (k, 2)
    dt: float

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])


def _merge_collinear(points: Array) -> Array:
    """Drop duplicate points and vertices with negligible turn angle."""
    pts = [points[0]]
    for p in points[1:]:
        if np.linalg.norm(p - pts[-1]) > 1e-12:
            pts.append(p)
    if len(pts) < 3:
        return np.asarray(pts)
    out = [pts[0]]
    for i in range(1, len(pts) - 1):
        d1 = pts[i] - out[-1]
        d2 = pts[i + 1] - pts[i]
        cos_turn = np.dot(d1, d2) / (np.linalg.norm(d1) * np.linalg.norm(d2))
        turn = np.arccos(np.clip(cos_turn, -1.0, 1.0))
        if turn > _COLLINEAR_TOL:
            out.append(pts[i])
    out.append(pts[-1])
    return np.asarray(out)


def retime(points: Array, v_max: float, a_max: float, dt: float) -> TimedTrajectory:
    """Timestamped samples along the polyline at the control period.

    Raises PreconditionError for paths with fewer than 2 distinct points
    or non-positive limits.  The last sample lands exactly on the final
    vertex (leg durations are padded up to the dt grid while at rest).
    """
    if v_max <= 0 or a_max <= 0 or dt <= 0:
        raise PreconditionError("v_max, a_max, dt must all be positive")
    pts = _merge_collinear(np.asarray(points, dtype=float))
    if pts.shape[0] < 2:
        raise PreconditionError("path needs at least 2 distinct points")

    legs = []
    for i in range(len(pts) - 1):
        length = float(np.linalg.norm(pts[i + 1] - pts[i]))
        duration = trapezoid_duration(length, v_max, a_max)
        # pad to the sample grid so every leg starts on a tick, at rest
        n_ticks = int(np.ceil(duration / dt - 1e-9))
        legs.append((pts[i], pts[i + 1], length, duration, n_ticks))

    total_ticks = sum(leg[4] for leg in legs)
    times = np.arange(total_ticks + 1) * dt
    positions = np.empty((total_ticks + 1, 2))
    cursor = 0
    for p0, p1, length, duration, n_ticks in legs:
        direction = (p1 - p0) / length
        for j in range(n_ticks):
            s = _leg_position(length, j * dt, v_max, a_max)
            positions[cursor] = p0 + s * direction
            cursor += 1
    positions[cursor] = pts[-1]
    return TimedTrajectory(times=times, positions=positions, dt=dt)
