"""Closed-loop execution: schedule tracking, full paint sessions, and the
gravity-compensation descent, all against the ground-truth simulator.

The 1 kHz plant+executor inner loop runs in the compiled kernel; the
coordinator runs at the coordination rate (default 100 Hz), strictly
after the control steps of the same instant, and decides cursor
freezing, deposition, arm activity, and aborts for the next chunk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .control import (
    GainSchedule,
    PidGains,
    PidState,
    TensionLimits,
    dual_space_pid,
    gravity_compensation,
    safety_monitor,
)
from .coordination import (
    EventLog,
    SessionConfig,
    SessionCoordinator,
    SessionTimeline,
    TickInputs,
)
from .errors import SessionAborted
from .geometry import PlatformState, RobotGeometry, WinchModel, forward_kinematics
from .simulator import CanvasRaster, SimConfig, Simulator, deposit_paint

Array = np.ndarray


@dataclass
class TrackingTrace:
    times: Array
    true_xy: Array
    est_xy: Array
    nominal_xy: Array
    tensions: Array
    deviation: Array  # estimate-vs-commanded norm per step

    def rms_error(self) -> float:
        err = np.linalg.norm(self.true_xy - self.nominal_xy, axis=1)
        return float(np.sqrt(np.mean(err**2)))

    def max_deviation(self) -> float:
        return float(np.max(self.deviation))


@dataclass
class SessionResult:
    completed: bool
    abort_reason: str | None
    trace: TrackingTrace
    painted_length: float
    descent_heights: Array | None = None


@dataclass(frozen=True)
class Fault:
    """Injected anomaly over a control-step range.

    kind "force": constant (2,) plant force [N];
    kind "slip": constant (4,) measured-length bias [m], the slipped-winch
    / encoder-fault class the deviation limits exist to catch.
    """

    kind: str
    start_step: int
    end_step: int
    value: Array

    def __post_init__(self):
        if self.kind not in ("force", "slip"):
            raise ValueError(f"unknown fault kind {self.kind!r}")
        object.__setattr__(self, "value", np.asarray(self.value, dtype=float))


def _active_faults(faults, step: int):
    force = None
    bias = None
    for f in faults or ():
        if f.start_step <= step < f.end_step:
            if f.kind == "force":
                force = f.value if force is None else force + f.value
            else:
                bias = f.value if bias is None else bias + f.value
    return force, bias


def _winch_arrays(config: SimConfig):
    w = config.ground_truth_winches
    if not w or len(w) != 4:
        raise ValueError("simulator config needs 4 ground-truth winches")
    return (
        np.array([wi.base_diameter for wi in w]),
        np.array([wi.cable_thickness for wi in w]),
        np.array([wi.layer_angle for wi in w]),
        np.array([wi.zero_offset for wi in w]),
    )


def executor_measurement(
    rates: Array, angles: Array, p_calib: Array, ratios: Array
) -> Array:
    """Angles + effective rates -> the executor's 8-vector z (distance space)."""
    dist = p_calib[:, 0] + p_calib[:, 1] * angles + p_calib[:, 2] * angles * angles
    return np.concatenate([dist, rates / ratios])


class ClosedLoopRunner:
    """Drives one simulator against one schedule via the compiled kernel."""

    def __init__(
        self,
        sim: Simulator,
        schedule: GainSchedule,
        calibrated: WinchModel,
        steps_per_tick: int = 10,
    ):
        if calibrated.convention != "distance":
            calibrated = calibrated.to_distance(sim.geom.routing_ratio)
        self.sim = sim
        self.schedule = schedule
        self.p_calib = calibrated.coeffs
        self.steps_per_tick = steps_per_tick
        self.cursor = 0
        self.dx_prev = np.zeros(4)
        gt = _winch_arrays(sim.config)
        self._kernel_args = dict(
            x_nom=schedule.x_nom, u_nom=schedule.u_nom, K=schedule.K,
            xK=schedule.xK, zK=schedule.zK, k_off=schedule.k,
            u_lo=schedule.limits.u_min, u_hi=schedule.limits.u_max,
            anchors_true=sim.true_anchors, attachments=sim.geom.attachments,
            ratios=sim.geom.routing_ratio, mass=sim.config.platform_mass,
            damping=sim.config.viscous_damping, gravity=sim.config.gravity,
            dt=sim.config.timestep,
            gt_base=gt[0], gt_thick=gt[1], gt_layer_angle=gt[2], gt_zero=gt[3],
            p_calib=self.p_calib,
        )

    def advance(
        self,
        n_steps: int,
        frozen: bool,
        extra_force: Array | None = None,
        length_bias: Array | None = None,
    ):
        """Run n_steps of plant+executor; returns (true_xy, est_xy, u, deviation).

        extra_force: constant plant force [N]; length_bias: per-cable
        measured-length offset [m] (a slipped winch / encoder fault).
        """
        cfg = self.sim.config
        rng = self.sim.rng
        noise_len = (
            rng.normal(0.0, cfg.sensor_noise_std_length, (n_steps, 4))
            if cfg.sensor_noise_std_length > 0 else np.zeros((n_steps, 4))
        )
        if length_bias is not None:
            noise_len = noise_len + np.asarray(length_bias, dtype=float)[None, :]
        noise_vel = (
            rng.normal(0.0, cfg.sensor_noise_std_velocity, (n_steps, 4))
            if cfg.sensor_noise_std_velocity > 0 else np.zeros((n_steps, 4))
        )
        dist_force = (
            rng.normal(0.0, cfg.disturbance_force_std, (n_steps, 2))
            if cfg.disturbance_force_std > 0 else np.zeros((n_steps, 2))
        )
        if extra_force is not None:
            dist_force = dist_force + np.asarray(extra_force, dtype=float)[None, :]
        x, v, dx_prev, true_xy, est_xy, u_trace, deviation, clamped = kernels.closed_loop_advance(
            self.sim.state.position.copy(), self.sim.state.velocity.copy(),
            self.dx_prev.copy(), self.cursor, n_steps, frozen,
            **self._kernel_args,
            noise_len=noise_len, noise_vel=noise_vel, dist_force=dist_force,
        )
        self.sim.state.position = x
        self.sim.state.velocity = v
        self.sim.time += n_steps * cfg.timestep
        self.sim.clamp_events += clamped
        self.dx_prev = dx_prev
        if not frozen:
            self.cursor = min(self.cursor + n_steps, self.schedule.n - 1)
        return true_xy, est_xy, u_trace, deviation


def _assemble_trace(chunks, schedule: GainSchedule) -> TrackingTrace:
    true_xy = np.vstack([c[0] for c in chunks])
    est_xy = np.vstack([c[1] for c in chunks])
    tensions = np.vstack([c[2] for c in chunks])
    deviation = np.concatenate([c[3] for c in chunks])
    nominal = np.vstack(
        [
            schedule.x_nom[
                min((c[4] + i if not c[5] else c[4]), schedule.n - 1), :2
            ]
            for c in chunks
            for i in range(len(c[0]))
        ]
    )
    times = np.arange(len(true_xy)) * schedule.dt
    return TrackingTrace(times, true_xy, est_xy, nominal, tensions, deviation)


def run_tracking(
    sim: Simulator,
    schedule: GainSchedule,
    calibrated: WinchModel,
    faults: list[Fault] | None = None,
) -> TrackingTrace:
    """Track a whole schedule with no session logic."""
    runner = ClosedLoopRunner(sim, schedule, calibrated)
    n = schedule.n
    chunks = []
    step0 = 0
    while step0 < n - 1:
        n_steps = min(runner.steps_per_tick, n - 1 - step0)
        force, bias = _active_faults(faults, step0)
        cursor_before = runner.cursor
        out = runner.advance(n_steps, frozen=False, extra_force=force, length_bias=bias)
        chunks.append((*out, cursor_before, False))
        step0 += n_steps
    return _assemble_trace(chunks, schedule)


def estimate_from_measurement(
    sim: Simulator, geom: RobotGeometry, calibrated: WinchModel
) -> Array:
    """Manual-mode position estimate: calibrated FK on the current packet."""
    m = sim.measure()
    model = (
        calibrated if calibrated.convention == "distance"
        else calibrated.to_distance(geom.routing_ratio)
    )
    pos, _ = forward_kinematics(geom, model, m.winch_angles, residual_threshold=0.5)
    return pos


def estimate_state_from_measurement(
    sim: Simulator,
    geom: RobotGeometry,
    calibrated: WinchModel,
    x0: Array | None = None,
) -> tuple[Array, Array]:
    """Position via calibrated FK plus velocity from the measured cable
    rates (a 4x2 least squares on rate = -ratio * unit . v), which is far
    quieter than differencing FK positions."""
    from .geometry import cable_geometry

    m = sim.measure()
    model = (
        calibrated if calibrated.convention == "distance"
        else calibrated.to_distance(geom.routing_ratio)
    )
    pos, _ = forward_kinematics(
        geom, model, m.winch_angles, initial_guess=x0, residual_threshold=0.5
    )
    cg = cable_geometry(geom, pos)
    A = -(geom.routing_ratio[:, None] * cg.unit_directions)
    vel, *_ = np.linalg.lstsq(A, m.cable_velocities, rcond=None)
    return pos, vel


def manual_goto(
    sim: Simulator,
    geom: RobotGeometry,
    calibrated: WinchModel,
    target: Array,
    limits: TensionLimits,
    gains: PidGains | None = None,
    tolerance: float = 0.003,
    timeout: float = 30.0,
    rate: float = 100.0,
) -> bool:
    """Dual-space PID approach to ``target`` on calibrated estimates.

    This is the joystick-era controller used to reach the schedule start
    before handing over to the precomputed gains.  Returns True when the
    estimate settles within tolerance.
    """
    gains = gains or PidGains()
    pid = PidState()
    dt_tick = 1.0 / rate
    steps = max(int(round(dt_tick / sim.config.timestep)), 1)
    est_prev = estimate_from_measurement(sim, geom, calibrated)
    v_est = np.zeros(2)

    for _ in range(int(timeout * rate)):
        est = estimate_from_measurement(sim, geom, calibrated)
        v_est = 0.6 * v_est + 0.4 * (est - est_prev) / dt_tick
        est_prev = est
        u, _ = dual_space_pid(
            target, np.zeros(2), PlatformState(est, v_est), geom, limits, gains,
            pid, dt_tick, sim.config.platform_mass, sim.config.gravity,
        )
        for _ in range(steps):
            sim.step(u)
        if np.linalg.norm(est - target) < tolerance and np.linalg.norm(v_est) < 0.01:
            return True
    return False


def gravity_descent(
    sim: Simulator,
    geom: RobotGeometry,
    calibrated: WinchModel,
    limits: TensionLimits,
    log: EventLog | None = None,
    floor: float | None = None,
    brake: float = 40.0,
    timeout: float = 120.0,
    rate: float = 100.0,
) -> Array:
    """Gravity-compensation descent after a hard fault.

    Cable-space braking (a damping term on measured cable rates) kills
    residual velocity first, then the 0.2 N descent bias walks the
    platform down.  Returns the height trace sampled at ``rate``.
    """
    floor = geom.workspace_margin if floor is None else floor
    dt_tick = 1.0 / rate
    steps = max(int(round(dt_tick / sim.config.timestep)), 1)
    heights = []
    if log:
        log.add(sim.time, "descent", "gravity compensation engaged")
    for _ in range(int(timeout * rate)):
        est = estimate_from_measurement(sim, geom, calibrated)
        u, _alarm = gravity_compensation(
            est, geom, sim.config.platform_mass, limits, gravity=sim.config.gravity
        )
        m = sim.measure()
        # brake: add tension on paying-out cables (dissipative by sign)
        u = np.clip(
            u + brake * (m.cable_velocities / geom.routing_ratio),
            limits.u_min, limits.u_max,
        )
        for _ in range(steps):
            sim.step(u, check_escape=False)
        heights.append(sim.state.position[1])
        if sim.state.position[1] <= floor:
            break
    if log:
        log.add(sim.time, "descent", f"landed at height {sim.state.position[1]:.3f}")
    return np.asarray(heights)


def run_paint_session(
    sim: Simulator,
    schedule: GainSchedule,
    timeline: SessionTimeline,
    calibrated: WinchModel,
    session_config: SessionConfig,
    log: EventLog,
    canvas: CanvasRaster | None = None,
    canvas_origin: Array | None = None,
    session_clock_offset: float = 0.0,
    faults: list[Fault] | None = None,
    limits: TensionLimits | None = None,
) -> SessionResult:
    """Execute one color's timeline under full session coordination."""
    runner = ClosedLoopRunner(sim, schedule, calibrated)
    coord = SessionCoordinator(timeline, session_config, log, session_clock_offset)
    coord.start()
    dt_tick = runner.steps_per_tick * sim.config.timestep
    origin = np.zeros(2) if canvas_origin is None else np.asarray(canvas_origin, dtype=float)
    limits = limits or schedule.limits

    chunks = []
    frozen = False
    prev_true = sim.state.position.copy()
    painted_total = 0.0
    step_offset = 0
    # generous budget: the timeline plus every overlay the session can accrue
    max_ticks = int(timeline.n / runner.steps_per_tick * 3 + 300 * session_config.coordination_rate)

    for _ in range(max_ticks):
        force, bias = _active_faults(faults, step_offset)
        cursor_before = runner.cursor
        true_xy, est_xy, u_trace, deviation = runner.advance(
            runner.steps_per_tick, frozen, extra_force=force, length_bias=bias
        )
        chunks.append((true_xy, est_xy, u_trace, deviation, cursor_before, frozen))
        step_offset += runner.steps_per_tick
        coord.cursor = runner.cursor

        if coord.depositing:
            if canvas is not None:
                dist, _ = deposit_paint(
                    canvas, prev_true - origin, true_xy[-1] - origin, timeline.color
                )
            else:
                dist = float(np.linalg.norm(true_xy[-1] - prev_true))
            coord.record_painted(dist)
            painted_total += dist
        prev_true = true_xy[-1].copy()

        sim.update_temps(coord.arm_heating, dt_tick)

        commanded = schedule.x_nom[min(runner.cursor, schedule.n - 1), :2]
        est = est_xy[-1]
        safety = safety_monitor(est, commanded)
        cmd = coord.tick(
            TickInputs(est, commanded, safety, sim.servo_temps.copy(), true_xy[-1]),
            dt_tick,
        )
        frozen = cmd.freeze_cursor

        if cmd.abort:
            heights = gravity_descent(sim, sim.geom, calibrated, limits, log)
            trace = _assemble_trace(chunks, schedule)
            return SessionResult(False, coord.abort_reason, trace, painted_total, heights)
        if runner.cursor >= schedule.n - 1 and not cmd.freeze_cursor:
            coord.finish()
            trace = _assemble_trace(chunks, schedule)
            return SessionResult(True, None, trace, painted_total)

    raise SessionAborted("session exceeded its tick budget without finishing")
