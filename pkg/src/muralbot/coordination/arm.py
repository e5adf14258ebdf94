"""Serial manipulator: analytic IK, trained configurations, transitions.

The arm is kinematic in simulation; what matters to the session is
which configuration it is in, how long transitions take, and that the
brush stays canvas-normal while painting.  Frames: the platform frame's
x/y span the canvas plane, z points out of the canvas toward the
platform body.  Joint vector: [shoulder yaw, shoulder pitch, elbow,
wrist], radians.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..errors import PreconditionError, ReachabilityError

Array = np.ndarray


class ArmState(enum.Enum):
    REST = "rest"  # the only power-off state
    PREP = "prep"  # pulled back, ready; also used during travel
    PAINTING = "painting"  # brush on canvas, stabilizer engaged
    DIPPING = "dipping"  # refilling at the platform paint cup


# legal direct edges; everything else reroutes through PREP
_ADJACENT = {
    frozenset((ArmState.REST, ArmState.PREP)),
    frozenset((ArmState.PREP, ArmState.PAINTING)),
    frozenset((ArmState.PREP, ArmState.DIPPING)),
}


@dataclass(frozen=True)
class ArmGeometry:
    """Link lengths sum to the 0.38 m reach; trained configurations are
    recorded joint vectors (the manual training workflow), while prep
    and painting come from the analytic IK."""

    upper_arm: float = 0.16
    forearm: float = 0.14
    brush: float = 0.08
    shoulder_standoff: float = 0.12  # shoulder height above the canvas plane
    joint_speed: float = 1.2  # rad/s, transition pacing
    joint_limits: Array = field(
        default_factory=lambda: np.array(
            [[-np.pi, np.pi], [-2.4, 2.4], [-2.8, 2.8], [-2.8, 2.8]]
        )
    )
    trained: dict = field(
        default_factory=lambda: {
            "rest": np.array([0.0, -1.8, 2.4, 0.5]),
            "dip": [np.array([1.2, -0.9, 1.8, 0.2]), np.array([1.2, -1.3, 2.2, 0.4])],
        }
    )
    prep_pullback: float = 0.06  # m off the canvas for the prep pose

    @property
    def reach(self) -> float:
        return self.upper_arm + self.forearm + self.brush

    def __post_init__(self):
        if abs(self.reach - 0.38) > 1e-9:
            raise PreconditionError(f"link lengths sum to {self.reach}, expected 0.38 m reach")
        for name, cfg in self.trained.items():
            configs = cfg if isinstance(cfg, list) else [cfg]
            for q in configs:
                if not self.within_limits(q):
                    raise PreconditionError(f"trained configuration {name!r} violates joint limits")

    def within_limits(self, q: Array) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.joint_limits[:, 0] - 1e-9) and np.all(q <= self.joint_limits[:, 1] + 1e-9))


def arm_ik(target: Array, geom: ArmGeometry, standoff_z: float = 0.0) -> Array:
    """Joint angles placing the brush tip at ``target`` (platform frame,
    canvas plane), brush perpendicular to the canvas.

    standoff_z lifts the tip off the canvas (used for the prep pose).
    The perpendicularity constraint fixes the wrist; the shoulder yaw
    aligns the arm plane; the remaining 2-link problem takes the
    elbow-down branch.  Raises ReachabilityError with the distance
    deficit for unreachable targets.
    """
    target = np.asarray(target, dtype=float)
    rho = float(np.hypot(target[0], target[1]))
    if rho > geom.reach + 1e-12:
        raise ReachabilityError(
            f"target at {rho:.3f} m exceeds the {geom.reach:.2f} m reach",
            deficit=rho - geom.reach,
        )
    yaw = float(np.arctan2(target[1], target[0]))
    # wrist center: brush length above the tip along +z
    wz = (geom.brush + standoff_z) - geom.shoulder_standoff
    L1, L2 = geom.upper_arm, geom.forearm
    D = float(np.hypot(rho, wz))
    if D > L1 + L2 + 1e-12:
        raise ReachabilityError(
            f"wrist center at {D:.3f} m exceeds the arm's {L1 + L2:.2f} m span",
            deficit=D - (L1 + L2),
        )
    if D < abs(L1 - L2) - 1e-12:
        raise ReachabilityError(f"target inside the {abs(L1 - L2):.2f} m inner annulus", deficit=abs(L1 - L2) - D)
    cos_e = (D * D - L1 * L1 - L2 * L2) / (2 * L1 * L2)
    elbow = -float(np.arccos(np.clip(cos_e, -1.0, 1.0)))  # elbow-down branch
    base = float(np.arctan2(wz, rho))
    offset = float(np.arctan2(L2 * np.sin(elbow), L1 + L2 * np.cos(elbow)))
    pitch = base - offset
    wrist = -np.pi / 2 - (pitch + elbow)  # brush axis along -z
    q = np.array([yaw, pitch, elbow, wrist])
    if not geom.within_limits(q):
        raise ReachabilityError(f"IK solution {np.round(q, 3)} violates joint limits")
    return q


def arm_fk(q: Array, geom: ArmGeometry) -> tuple[Array, float]:
    """Brush tip (x, y) in the platform frame and its height off the canvas."""
    yaw, pitch, elbow, wrist = np.asarray(q, dtype=float)
    L1, L2, Lb = geom.upper_arm, geom.forearm, geom.brush
    rho = L1 * np.cos(pitch) + L2 * np.cos(pitch + elbow) + Lb * np.cos(pitch + elbow + wrist)
    z = (
        geom.shoulder_standoff
        + L1 * np.sin(pitch)
        + L2 * np.sin(pitch + elbow)
        + Lb * np.sin(pitch + elbow + wrist)
    )
    return np.array([rho * np.cos(yaw), rho * np.sin(yaw)]), float(z)


@dataclass(frozen=True)
class ArmTrajectory:
    waypoints: Array  # (m, 4) joint-space path including both endpoints
    duration: float  # s
    rerouted: bool = False

    @property
    def empty(self) -> bool:
        return self.duration == 0.0


def _leg(q0: Array, q1: Array, geom: ArmGeometry) -> float:
    return float(np.max(np.abs(np.asarray(q1) - np.asarray(q0))) / geom.joint_speed)


def arm_transition(
    from_state: ArmState,
    to_state: ArmState,
    geom: ArmGeometry,
    configurations: dict,
) -> ArmTrajectory:
    """Joint-interpolated trajectory between arm states.

    ``configurations`` maps state -> joint vector (PAINTING's entry is
    the IK solution for the current engage target).  Dipping inserts the
    trained intermediate waypoints.  Non-adjacent pairs are rerouted
    through PREP automatically and flagged.
    """
    if from_state is to_state:
        return ArmTrajectory(np.array([configurations[from_state]] * 1), 0.0)
    rerouted = False
    chain = [from_state, to_state]
    if frozenset((from_state, to_state)) not in _ADJACENT:
        chain = [from_state, ArmState.PREP, to_state]
        rerouted = True

    waypoints = [np.asarray(configurations[chain[0]], dtype=float)]
    for a, b in zip(chain, chain[1:]):
        if ArmState.DIPPING in (a, b):
            # trained intermediate waypoints keep the dip collision-free
            mids = geom.trained["dip"]
            seq = mids if b is ArmState.DIPPING else list(reversed(mids))
            for q in seq:
                waypoints.append(np.asarray(q, dtype=float))
        waypoints.append(np.asarray(configurations[b], dtype=float))
    duration = sum(_leg(waypoints[i], waypoints[i + 1], geom) for i in range(len(waypoints) - 1))
    for q in waypoints:
        if not geom.within_limits(q):
            raise PreconditionError("transition waypoint violates joint limits")
    return ArmTrajectory(np.asarray(waypoints), duration, rerouted)


def sample_transition(traj: ArmTrajectory, geom: ArmGeometry, n: int = 50) -> Array:
    """Dense joint samples along a transition (for limit checks)."""
    if traj.duration == 0.0:
        return traj.waypoints
    legs = []
    for i in range(len(traj.waypoints) - 1):
        q0, q1 = traj.waypoints[i], traj.waypoints[i + 1]
        steps = max(int(n / (len(traj.waypoints) - 1)), 2)
        legs.append(q0 + np.linspace(0, 1, steps)[:, None] * (q1 - q0))
    return np.vstack(legs)
