"""Manual-mode controllers: tension distribution, dual-space PID, gravity descent.

These run when no precomputed schedule exists (joystick alignment, safe
descent after a hard fault).  All of them reduce to the same small
problem: realize a target platform wrench with four non-negative,
box-bounded cable tensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from ..errors import WorkspaceError
from ..geometry import PlatformState, RobotGeometry, cable_geometry

Array = np.ndarray


@dataclass(frozen=True)
class TensionLimits:
    u_min: float
    u_max: float

    def __post_init__(self):
        if not (0 <= self.u_min < self.u_max):
            raise ValueError("require 0 <= u_min < u_max")

    def clip(self, u: Array) -> Array:
        return np.clip(u, self.u_min, self.u_max)

    @property
    def mid(self) -> float:
        return 0.5 * (self.u_min + self.u_max)


def wrench_matrix(geom: RobotGeometry, position: Array) -> Array:
    """(2, 4) map from cable tensions to platform force (routing included)."""
    cg = cable_geometry(geom, position)
    return (geom.routing_ratio[:, None] * cg.unit_directions).T


def distribute_tensions(
    W: Array,
    force: Array,
    limits: TensionLimits,
    u_ref: Array | float = 0.0,
) -> tuple[Array, bool]:
    """min ||u - u_ref||^2 subject to W u = force and box limits.

    Active-set iteration on the box: solve the equality-constrained
    problem on the free set, clamp violators, repeat.  When the wrench
    is infeasible within the limits, falls back to the best-effort
    bounded least squares projection (min ||W u - force|| over the box)
    and reports exact=False.
    """
    u_ref = np.broadcast_to(np.asarray(u_ref, dtype=float), (4,)).copy()
    free = np.ones(4, dtype=bool)
    u = u_ref.copy()
    for _ in range(8):
        Wf = W[:, free]
        rhs = force - W[:, ~free] @ u[~free]
        # u_free = u_ref_free + Wf^T lam,  Wf u_free = rhs
        G = Wf @ Wf.T
        try:
            lam = np.linalg.solve(G, rhs - Wf @ u_ref[free])
        except np.linalg.LinAlgError:
            break
        u_free = u_ref[free] + Wf.T @ lam
        u[free] = u_free
        lo_viol = u < limits.u_min - 1e-12
        hi_viol = u > limits.u_max + 1e-12
        viol = (lo_viol | hi_viol) & free
        if not np.any(viol):
            if np.linalg.norm(W @ u - force) < 1e-9 * max(1.0, np.linalg.norm(force)):
                return u, True
            break
        u[lo_viol & free] = limits.u_min
        u[hi_viol & free] = limits.u_max
        free = free & ~viol
        if free.sum() < 2:
            break
    res = lsq_linear(W, force, bounds=(limits.u_min, limits.u_max))
    exact = bool(np.linalg.norm(W @ res.x - force) < 1e-9 * max(1.0, np.linalg.norm(force)))
    return res.x, exact


def gravity_compensation(
    estimate: PlatformState | Array,
    geom: RobotGeometry,
    mass: float,
    limits: TensionLimits,
    descent_force: float = 0.2,
    gravity: float = 9.81,
) -> tuple[Array, bool]:
    """Minimum-norm tensions leaving a small net downward force.

    With descent_force = 0 this is the static equilibrium hold; the
    default 0.2 N makes the platform settle gently instead of hanging.
    Returns (tensions, alarm); alarm=True means the wrench was
    infeasible and a maximum-tension hold was substituted.
    """
    pos = estimate.position if isinstance(estimate, PlatformState) else np.asarray(estimate, float)
    W = wrench_matrix(geom, pos)
    force = np.array([0.0, mass * gravity - descent_force])
    u, exact = distribute_tensions(W, force, limits, u_ref=0.0)
    if not exact:
        return np.full(4, limits.u_max), True
    return u, False


@dataclass(frozen=True)
class PidGains:
    kp: float = 180.0  # N/m
    kd: float = 60.0  # N*s/m
    ki: float = 40.0  # N/(m*s)
    integrator_limit: float = 0.05  # m*s, anti-windup clamp per axis
    cable_damping: float = 2.0  # N per m/s of cable rate


@dataclass
class PidState:
    integral: Array = field(default_factory=lambda: np.zeros(2))


def dual_space_pid(
    target_position: Array,
    target_velocity: Array,
    estimate: PlatformState,
    geom: RobotGeometry,
    limits: TensionLimits,
    gains: PidGains,
    state: PidState,
    dt: float,
    mass: float,
    gravity: float = 9.81,
) -> tuple[Array, bool]:
    """Task-space PID wrench + gravity, distributed to cables, plus
    cable-space damping on the estimated cable rates.

    Mutates ``state`` (integrator with anti-windup).  Returns
    (tensions, exact); exact=False flags a best-effort projection.
    Raises WorkspaceError for targets outside the workspace margin.
    """
    target_position = np.asarray(target_position, dtype=float)
    if not geom.contains(target_position):
        raise WorkspaceError(f"manual-mode target {target_position} outside workspace")
    e = target_position - estimate.position
    edot = np.asarray(target_velocity, dtype=float) - estimate.velocity
    state.integral = np.clip(
        state.integral + e * dt, -gains.integrator_limit, gains.integrator_limit
    )
    force = gains.kp * e + gains.kd * edot + gains.ki * state.integral
    force = force + np.array([0.0, mass * gravity])
    cg = cable_geometry(geom, estimate.position)
    W = (geom.routing_ratio[:, None] * cg.unit_directions).T
    u, exact = distribute_tensions(W, force, limits, u_ref=limits.mid)
    # damp cable-space rate: a paying-out cable (positive rate, platform
    # receding from its anchor) gets extra tension pulling it back
    rates = -geom.routing_ratio * (cg.unit_directions @ estimate.velocity)
    u = limits.clip(u + gains.cable_damping * rates)
    return u, exact
