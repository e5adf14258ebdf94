"""Arm behavior and painting-session coordination."""

from .arm import (
    ArmGeometry,
    ArmState,
    ArmTrajectory,
    arm_fk,
    arm_ik,
    arm_transition,
    sample_transition,
)
from .session import (
    EventLog,
    SessionConfig,
    SessionCoordinator,
    SessionPhase,
    SessionTimeline,
    TickCommands,
    TickInputs,
    build_session_timeline,
    drift_compensation,
)

__all__ = [
    "ArmGeometry",
    "ArmState",
    "ArmTrajectory",
    "EventLog",
    "SessionConfig",
    "SessionCoordinator",
    "SessionPhase",
    "SessionTimeline",
    "TickCommands",
    "TickInputs",
    "arm_fk",
    "arm_ik",
    "arm_transition",
    "build_session_timeline",
    "drift_compensation",
    "sample_transition",
]
