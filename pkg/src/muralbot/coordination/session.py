"""Painting-session coordination: timeline compilation, the session state
machine, settle pauses, the re-dip heuristic, thermal and safety pausing,
and servo drift compensation.

The per-color CDPR motion (travels, strokes, and the mandatory settle
dwells around brush engagement) is compiled into a dense timeline before
gain synthesis, so the executor's schedule and the session phases share
one index.  Runtime-only events (re-dips, thermal pauses, safety holds)
freeze the schedule cursor while feedback continues on the frozen
nominal, then release it; the cursor never skips.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..artwork import PaintProgram
from ..control.safety import SafetyState
from .arm import ArmGeometry, ArmState, ArmTrajectory, arm_ik, arm_transition

Array = np.ndarray


class SessionPhase(enum.Enum):
    IDLE = "Idle"
    TRAVELING = "Traveling"
    START_PAINTING = "StartPainting"
    PAINTING = "Painting"
    STOP_PAINTING = "StopPainting"
    REFILLING = "Refilling"
    PAUSED = "Paused"
    ABORTED = "Aborted"


@dataclass(frozen=True)
class SessionConfig:
    settle_after_travel: float = 1.0  # s before the arm engages
    settle_after_engage: float = 2.0  # s after the stabilizer locks
    dip_distance_threshold: float = 0.5  # m painted before a re-dip
    dip_dwell: float = 1.0  # s in the paint cup
    thermal_pause_c: float = 65.0
    thermal_resume_c: float = 50.0  # hysteresis below the pause threshold
    soft_resume_m: float = 0.05  # deviation must shrink to here to resume
    coordination_rate: float = 100.0  # Hz
    color_swap_duration: float = 10.0  # s of simulated operator brush swap
    drift_rate_m_per_hr: float = 0.01
    # engage point in the platform frame: below the platform center, well
    # inside the reach annulus even with the prep pullback applied
    brush_engage_point: Array = field(default_factory=lambda: np.array([0.0, -0.24]))


def drift_compensation(session_clock: float, rate_m_per_hr: float = 0.01) -> float:
    """Vertical paint-target offset compensating slow servo sag."""
    if session_clock < 0:
        raise ValueError("session clock must be >= 0")
    return rate_m_per_hr * (session_clock / 3600.0)


# -- timeline -----------------------------------------------------------------

SEG_TRAVEL = "travel"
SEG_SETTLE_TRAVEL = "settle_travel"
SEG_ARM_ENGAGE = "arm_engage"
SEG_SETTLE_ENGAGE = "settle_engage"
SEG_STROKE = "stroke"
SEG_ARM_DISENGAGE = "arm_disengage"


@dataclass(frozen=True)
class TimelineSegment:
    kind: str
    start: int  # first sample index
    end: int  # one past the last sample index
    stroke_index: int  # which engaged stroke this belongs to (-1 for travel)


@dataclass(frozen=True)
class SessionTimeline:
    """Dense per-color CDPR reference with phase annotations."""

    positions: Array  # (N, 2) at dt
    dt: float
    segments: tuple[TimelineSegment, ...]
    color: str
    engage_duration: float
    disengage_duration: float
    dip_duration: float

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def segment_at(self, index: int) -> TimelineSegment:
        # segments are contiguous; binary search by start
        lo, hi = 0, len(self.segments) - 1
        index = min(max(index, 0), self.n - 1)
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.segments[mid].start <= index:
                lo = mid
            else:
                hi = mid - 1
        return self.segments[lo]


def build_session_timeline(
    program: PaintProgram,
    config: SessionConfig,
    arm: ArmGeometry,
    dt: float = 0.001,
    origin: Array | None = None,
) -> SessionTimeline:
    """Insert the settle dwells and arm transition holds around every
    engaged stroke of the compiled program.

    The dwell at a stroke start is settle_after_travel + the arm's
    engage time + settle_after_engage, all at the stroke's first point;
    stroke ends hold for the disengage time.  Dip time is precomputed
    for the runtime re-dip overlay.  ``origin`` translates the program's
    canvas coordinates into the world frame.
    """
    prep_q = arm_ik(config.brush_engage_point, arm, standoff_z=arm.prep_pullback)
    paint_q = arm_ik(config.brush_engage_point, arm)
    configs = {
        ArmState.REST: arm.trained["rest"],
        ArmState.PREP: prep_q,
        ArmState.PAINTING: paint_q,
        ArmState.DIPPING: arm.trained["dip"][-1],
    }
    engage = arm_transition(ArmState.PREP, ArmState.PAINTING, arm, configs).duration
    disengage = arm_transition(ArmState.PAINTING, ArmState.PREP, arm, configs).duration
    dip = (
        arm_transition(ArmState.PREP, ArmState.DIPPING, arm, configs).duration
        + config.dip_dwell
        + arm_transition(ArmState.DIPPING, ArmState.PREP, arm, configs).duration
    )

    def ticks(seconds: float) -> int:
        return max(int(np.ceil(seconds / dt - 1e-9)), 1)

    chunks: list[Array] = []
    segments: list[TimelineSegment] = []
    cursor = 0
    stroke_idx = -1

    def push(kind: str, positions: Array, stroke: int) -> None:
        nonlocal cursor
        if len(positions) == 0:
            return
        chunks.append(positions)
        segments.append(TimelineSegment(kind, cursor, cursor + len(positions), stroke))
        cursor += len(positions)

    def dwell(kind: str, point: Array, seconds: float, stroke: int) -> None:
        push(kind, np.tile(point, (ticks(seconds), 1)), stroke)

    shift = np.zeros(2) if origin is None else np.asarray(origin, dtype=float)
    first = True
    for s in program.strokes:
        pos = s.positions + shift[None, :]
        if s.engaged:
            stroke_idx += 1
            start_pt = pos[0]
            dwell(SEG_SETTLE_TRAVEL, start_pt, config.settle_after_travel, stroke_idx)
            dwell(SEG_ARM_ENGAGE, start_pt, engage, stroke_idx)
            dwell(SEG_SETTLE_ENGAGE, start_pt, config.settle_after_engage, stroke_idx)
            push(SEG_STROKE, pos if first else pos[1:], stroke_idx)
            dwell(SEG_ARM_DISENGAGE, pos[-1], disengage, stroke_idx)
        else:
            push(SEG_TRAVEL, pos if first else pos[1:], -1)
        first = False

    return SessionTimeline(
        positions=np.vstack(chunks),
        dt=dt,
        segments=tuple(segments),
        color=program.color,
        engage_duration=engage,
        disengage_duration=disengage,
        dip_duration=dip,
    )


# -- event log ----------------------------------------------------------------


class EventLog:
    """One event per line: timestamp, kind, detail (tab separated)."""

    def __init__(self):
        self.events: list[tuple[float, str, str]] = []

    def add(self, t: float, kind: str, detail: str) -> None:
        self.events.append((float(t), kind, detail))

    def write(self, path: str | Path) -> None:
        with open(path, "w") as f:
            for t, kind, detail in self.events:
                f.write(f"{t:.3f}\t{kind}\t{detail}\n")

    @staticmethod
    def read(path: str | Path) -> list[tuple[float, str, str]]:
        out = []
        for line in Path(path).read_text().splitlines():
            t, kind, detail = line.split("\t", 2)
            out.append((float(t), kind, detail))
        return out


# -- session coordinator -------------------------------------------------------


@dataclass
class TickInputs:
    estimate: Array  # estimated platform position
    commanded: Array  # current nominal position (frozen or not)
    safety: SafetyState
    servo_temps: Array
    true_position: Array


@dataclass
class TickCommands:
    freeze_cursor: bool = False
    deposit: bool = False
    arm_active: bool = False
    abort: bool = False
    done: bool = False


class SessionCoordinator:
    """Walks one color's timeline; owns SessionState transitions.

    tick() is called at the coordination rate with fresh sensor-side
    inputs and returns the commands the runner must apply for the next
    chunk of control steps.  All transitions and safety/thermal/dip
    events land in the event log.
    """

    def __init__(
        self,
        timeline: SessionTimeline,
        config: SessionConfig,
        log: EventLog,
        session_clock_offset: float = 0.0,
    ):
        self.timeline = timeline
        self.config = config
        self.log = log
        self.cursor = 0
        self.clock = session_clock_offset
        self.phase = SessionPhase.IDLE
        self.arm_state = ArmState.PREP
        self.stabilizer_engaged = False
        self.painted_since_dip = 0.0
        self.current_stroke_painted = 0.0
        self.pause_reason: str | None = None
        self.dip_remaining = 0.0
        self.abort_reason: str | None = None
        self._depositing = False
        self._thermal_reengage = 0.0
        self._was_painting_before_pause = False
        self._last_seg_kind: str | None = None

    @property
    def depositing(self) -> bool:
        return self._depositing

    @property
    def arm_heating(self) -> bool:
        """Servos drive during transitions and hold torque while locked."""
        seg = self._seg().kind
        return (
            self.stabilizer_engaged
            or self.dip_remaining > 0
            or self._thermal_reengage > 0
            or seg in (SEG_ARM_ENGAGE, SEG_ARM_DISENGAGE)
        )

    # -- helpers ---------------------------------------------------------

    def _transition(self, phase: SessionPhase, cause: str) -> None:
        if phase is not self.phase:
            self.log.add(self.clock, "transition", f"{self.phase.value}->{phase.value} cause={cause}")
            self.phase = phase

    def _set_stabilizer(self, engaged: bool) -> None:
        if engaged != self.stabilizer_engaged:
            self.stabilizer_engaged = engaged
            self.log.add(self.clock, "stabilizer", "engaged" if engaged else "released")

    def _set_deposit(self, on: bool) -> None:
        if on != self._depositing:
            self._depositing = on
            self.log.add(self.clock, "deposit", "start" if on else "stop")

    def _set_arm(self, state: ArmState, cause: str) -> None:
        if state is not self.arm_state:
            self.log.add(self.clock, "arm", f"{self.arm_state.value}->{state.value} cause={cause}")
            self.arm_state = state

    def start(self) -> None:
        self.log.add(self.clock, "program", f"start color={self.timeline.color}")
        self._transition(SessionPhase.TRAVELING, "program_start")

    def finish(self) -> None:
        self._set_deposit(False)
        self._set_stabilizer(False)
        self._set_arm(ArmState.PREP, "program_end")
        self._transition(SessionPhase.IDLE, "program_end")
        self.log.add(self.clock, "program", f"end color={self.timeline.color}")

    # -- the tick --------------------------------------------------------

    def tick(self, inputs: TickInputs, dt_tick: float) -> TickCommands:
        cmd = TickCommands()
        self.clock += dt_tick

        if self.phase is SessionPhase.ABORTED:
            cmd.abort = True
            cmd.freeze_cursor = True
            return cmd

        # hard limit: abort immediately, regardless of current state
        if inputs.safety is SafetyState.HARD_LIMIT:
            self._set_deposit(False)
            self._set_stabilizer(False)
            self.abort_reason = "hard_limit"
            self.log.add(self.clock, "safety", "hard_limit deviation")
            self._transition(SessionPhase.ABORTED, "hard_limit")
            cmd.abort = True
            return cmd

        # thermal pause trumps everything but the hard limit
        max_temp = float(np.max(inputs.servo_temps))
        if self.pause_reason == "thermal":
            cmd.freeze_cursor = True
            if self._thermal_reengage > 0.0:
                # cooled down; re-engage the brush before resuming
                self._thermal_reengage -= dt_tick
                cmd.arm_active = True
                if self._thermal_reengage <= 0.0:
                    self._set_stabilizer(True)
                    self._set_deposit(self._seg().kind == SEG_STROKE)
                    self.pause_reason = None
                    self.log.add(self.clock, "thermal", "resumed")
                    self._transition(SessionPhase.PAINTING if self._seg().kind == SEG_STROKE else SessionPhase.TRAVELING, "thermal_resume")
                return cmd
            if max_temp <= self.config.thermal_resume_c:
                if self._was_painting_before_pause:
                    # arm re-engages, then the post-engage settle repeats
                    self._thermal_reengage = (
                        self.timeline.engage_duration + self.config.settle_after_engage
                    )
                    self._set_arm(ArmState.PAINTING, "thermal_reengage")
                else:
                    self.pause_reason = None
                    self.log.add(self.clock, "thermal", "resumed")
                    self._transition(SessionPhase.TRAVELING, "thermal_resume")
            return cmd
        if max_temp >= self.config.thermal_pause_c and self.pause_reason is None:
            self._was_painting_before_pause = self._seg().kind == SEG_STROKE and self.stabilizer_engaged
            self._set_deposit(False)
            if self.stabilizer_engaged:
                self._set_stabilizer(False)
                self._set_arm(ArmState.PREP, "thermal_pause")
            self.pause_reason = "thermal"
            self.log.add(self.clock, "thermal", f"paused at {max_temp:.1f}C")
            self._transition(SessionPhase.PAUSED, "thermal")
            cmd.freeze_cursor = True
            return cmd

        # soft limit: hold position on the frozen nominal until it clears
        if self.pause_reason == "soft_limit":
            cmd.freeze_cursor = True
            deviation = float(np.linalg.norm(inputs.estimate - inputs.commanded))
            if deviation < self.config.soft_resume_m:
                self.pause_reason = None
                self.log.add(self.clock, "safety", "soft_limit cleared")
                self._set_deposit(self._seg().kind == SEG_STROKE and self.stabilizer_engaged)
                self._transition(
                    SessionPhase.PAINTING if self._seg().kind == SEG_STROKE else SessionPhase.TRAVELING,
                    "soft_limit_cleared",
                )
            return cmd
        if inputs.safety is SafetyState.SOFT_LIMIT:
            self.pause_reason = "soft_limit"
            self._set_deposit(False)
            self.log.add(self.clock, "safety", "soft_limit deviation")
            self._transition(SessionPhase.PAUSED, "soft_limit")
            cmd.freeze_cursor = True
            return cmd

        # re-dip overlay: cursor frozen while the arm visits the cup
        if self.dip_remaining > 0.0:
            self.dip_remaining -= dt_tick
            cmd.freeze_cursor = True
            cmd.arm_active = True
            if self.dip_remaining <= 0.0:
                self.painted_since_dip = 0.0
                self._set_arm(ArmState.PREP, "dip_done")
                self.log.add(self.clock, "dip", "done")
                self._transition(SessionPhase.TRAVELING, "dip_done")
            return cmd

        seg = self._seg()
        kind = seg.kind
        if kind != self._last_seg_kind:
            self._on_segment_enter(seg)
            self._last_seg_kind = kind

        cmd.deposit = self._depositing
        cmd.arm_active = self.stabilizer_engaged or kind in (SEG_ARM_ENGAGE, SEG_ARM_DISENGAGE)
        if self.cursor >= self.timeline.n - 1:
            cmd.done = True
        return cmd

    def _seg(self) -> TimelineSegment:
        return self.timeline.segment_at(min(self.cursor, self.timeline.n - 1))

    def _on_segment_enter(self, seg: TimelineSegment) -> None:
        kind = seg.kind
        if kind == SEG_TRAVEL:
            self._set_deposit(False)
            self._transition(SessionPhase.TRAVELING, "travel")
        elif kind == SEG_SETTLE_TRAVEL:
            self._set_deposit(False)
            self._transition(SessionPhase.START_PAINTING, "stroke_start")
            self.log.add(self.clock, "settle", "travel_arrest 1.0s")
        elif kind == SEG_ARM_ENGAGE:
            self._set_arm(ArmState.PAINTING, "engage")
        elif kind == SEG_SETTLE_ENGAGE:
            self._set_stabilizer(True)
            self.log.add(self.clock, "settle", "post_engage 2.0s")
        elif kind == SEG_STROKE:
            self.current_stroke_painted = 0.0
            self._transition(SessionPhase.PAINTING, "settled")
            self._set_deposit(True)
        elif kind == SEG_ARM_DISENGAGE:
            self._set_deposit(False)
            self._transition(SessionPhase.STOP_PAINTING, "stroke_end")
            self._set_stabilizer(False)
            self._set_arm(ArmState.PREP, "disengage")
            # stroke boundary: the re-dip heuristic fires here, never mid-stroke
            if self.painted_since_dip >= self.config.dip_distance_threshold:
                excess = self.painted_since_dip - self.config.dip_distance_threshold
                self._set_arm(ArmState.DIPPING, "refill")
                self.dip_remaining = self.timeline.dip_duration
                self.log.add(
                    self.clock, "dip",
                    f"start painted={self.painted_since_dip:.3f} excess={excess:.3f}",
                )
                self._transition(SessionPhase.REFILLING, "paintbrush_dry")

    def record_painted(self, distance: float) -> None:
        self.painted_since_dip += distance
        self.current_stroke_painted += distance

    def advance_cursor(self, steps: int) -> None:
        self.cursor = min(self.cursor + steps, self.timeline.n - 1)

    @property
    def paint_target_offset(self) -> float:
        """Drift-compensated vertical offset for the arm engage target."""
        return drift_compensation(self.clock, self.config.drift_rate_m_per_hr)
