"""Deviation-based safety limits."""

from __future__ import annotations

import enum

import numpy as np


class SafetyState(enum.Enum):
    NOMINAL = "nominal"
    SOFT_LIMIT = "soft_limit"
    HARD_LIMIT = "hard_limit"


SOFT_LIMIT_M = 0.10
HARD_LIMIT_M = 0.20


def safety_monitor(
    estimate: np.ndarray,
    commanded: np.ndarray,
    soft: float = SOFT_LIMIT_M,
    hard: float = HARD_LIMIT_M,
) -> SafetyState:
    """Classify tracking deviation: pause at ``soft`` meters, abort at ``hard``."""
    deviation = float(np.linalg.norm(np.asarray(estimate, float) - np.asarray(commanded, float)))
    if deviation >= hard:
        return SafetyState.HARD_LIMIT
    if deviation >= soft:
        return SafetyState.SOFT_LIMIT
    return SafetyState.NOMINAL
