"""Ground-truth planar plant, sensor synthesis, paint raster, servo thermals.

This is the test double for every experiment: the platform is a planar
point mass pulled by four cables (tensions cannot push), measurements are
synthesized through layered ground-truth winches so that calibration
error is something the rest of the stack has to *earn* its way out of.

The functions here are pure; the ``Simulator`` class is a thin stateful
wrapper that owns the clock, the injected anchor offsets, and the servo
temperatures.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SimulationEscapeError
from .geometry import GroundTruthWinch, PlatformState, RobotGeometry, cable_geometry

Array = np.ndarray


@dataclass(frozen=True)
class ThermalParams:
    """First-order servo heating model: dT/dt = k_heat*active - k_cool*(T - ambient)."""

    k_heat: float = 1.5  # degC/s while servos are driving
    k_cool: float = 0.05  # 1/s
    ambient: float = 25.0  # degC


@dataclass
class SimConfig:
    platform_mass: float = 12.0
    gravity: float = 9.81  # magnitude, acts along -y
    viscous_damping: float = 8.0  # N*s/m
    timestep: float = 0.001  # 1 kHz control loop
    sensor_noise_std_length: float = 0.0  # m
    sensor_noise_std_velocity: float = 0.0  # m/s
    disturbance_force_std: float = 0.0  # N
    ground_truth_winches: tuple[GroundTruthWinch, ...] = ()
    anchor_error_std: float = 0.0  # m, drawn once per scenario
    anchor_offsets: Array | None = None  # realized (4,2) true-minus-assumed
    thermal: ThermalParams = field(default_factory=ThermalParams)

    def __post_init__(self):
        if self.timestep <= 0 or self.platform_mass <= 0:
            raise ValueError("timestep and mass must be positive")
        if (
            self.sensor_noise_std_length < 0
            or self.sensor_noise_std_velocity < 0
            or self.disturbance_force_std < 0
            or self.anchor_error_std < 0
        ):
            raise ValueError("noise/error stds must be >= 0")
        if self.anchor_offsets is not None:
            self.anchor_offsets = np.asarray(self.anchor_offsets, dtype=float)
            if self.anchor_offsets.shape != (4, 2):
                raise ValueError("anchor_offsets must be (4, 2)")


@dataclass
class Measurement:
    """What the MCU sees: effective cable lengths/velocities and encoder angles."""

    cable_lengths: Array  # (4,) m, routing-ratio side
    cable_velocities: Array  # (4,) m/s
    winch_angles: Array  # (4,) rad
    servo_temperatures: Array  # (4,) degC
    timestamp: float


def tension_acceleration(
    geom: RobotGeometry,
    position: Array,
    velocity: Array,
    tensions: Array,
    config: SimConfig,
    anchors: Array | None = None,
) -> Array:
    """Platform acceleration under the given cable tensions [m/s^2]."""
    A = geom.anchors if anchors is None else anchors
    delta = A - (position[None, :] + geom.attachments)
    dist = np.linalg.norm(delta, axis=1)
    dist = np.maximum(dist, 1e-12)
    units = delta / dist[:, None]
    force = (geom.routing_ratio * tensions) @ units  # 2:1 pulleys double force
    g = np.array([0.0, -config.gravity])
    return force / config.platform_mass + g - (config.viscous_damping / config.platform_mass) * velocity


def step(
    state: PlatformState,
    tensions: Array,
    geom: RobotGeometry,
    config: SimConfig,
    dt: float | None = None,
    disturbance: Array | None = None,
    anchors: Array | None = None,
) -> tuple[PlatformState, bool]:
    """One semi-implicit Euler step; returns (new state, clamped flag).

    Negative tension commands are clamped to zero at the plant boundary
    (cables cannot push) and reported through the flag.
    """
    dt = config.timestep if dt is None else dt
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.asarray(tensions, dtype=float)
    clamped = bool(np.any(u < 0))
    u = np.maximum(u, 0.0)
    a = tension_acceleration(geom, state.position, state.velocity, u, config, anchors)
    if disturbance is not None:
        a = a + np.asarray(disturbance, dtype=float) / config.platform_mass
    v_new = state.velocity + dt * a
    x_new = state.position + dt * v_new
    return PlatformState(x_new, v_new), clamped


def check_in_frame(position: Array, geom: RobotGeometry, slack: float = 0.0) -> None:
    x = np.asarray(position, dtype=float)
    if (
        x[0] < -slack
        or x[0] > geom.frame_width + slack
        or x[1] < -slack
        or x[1] > geom.frame_height + slack
    ):
        raise SimulationEscapeError(f"platform escaped the frame at {x}")


def measure(
    state: PlatformState,
    geom: RobotGeometry,
    config: SimConfig,
    rng: np.random.Generator,
    timestamp: float = 0.0,
    servo_temps: Array | None = None,
    anchors: Array | None = None,
) -> Measurement:
    """Synthesize a sensor packet at the given true state.

    Effective lengths get additive gaussian noise, then encoder angles
    are produced by inverting the layered ground-truth winch at the
    noisy length, so angle noise is consistent with length noise.
    """
    A = geom.anchors if anchors is None else anchors
    delta = A - (state.position[None, :] + geom.attachments)
    dist = np.linalg.norm(delta, axis=1)
    units = delta / np.maximum(dist, 1e-12)[:, None]
    lengths = geom.routing_ratio * dist
    rates = -geom.routing_ratio * (units @ state.velocity)
    if config.sensor_noise_std_length > 0:
        lengths = lengths + rng.normal(0.0, config.sensor_noise_std_length, 4)
    if config.sensor_noise_std_velocity > 0:
        rates = rates + rng.normal(0.0, config.sensor_noise_std_velocity, 4)
    winches = config.ground_truth_winches
    if winches:
        angles = np.array([winches[i].angle_for_length(lengths[i]) for i in range(4)])
    else:
        angles = np.zeros(4)
    temps = np.full(4, config.thermal.ambient) if servo_temps is None else np.asarray(servo_temps, float)
    return Measurement(lengths, rates, angles, temps.copy(), timestamp)


def update_servo_temps(temps: Array, arm_active: bool, dt: float, params: ThermalParams) -> Array:
    """First-order heating while active, Newton cooling toward ambient."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    T = np.asarray(temps, dtype=float)
    dT = params.k_heat * (1.0 if arm_active else 0.0) - params.k_cool * (T - params.ambient)
    return T + dt * dT


# -- paint raster -------------------------------------------------------------


@dataclass
class CanvasRaster:
    """Per-color stroke coverage grids over the painting region.

    Coordinates handed to deposit() are in the canvas frame (origin at
    the canvas lower-left corner); grids are indexed [row=y, col=x] with
    pixel centers at ((col+0.5)/res, (row+0.5)/res).
    """

    width: float
    height: float
    resolution: float  # px/m
    brush_width: float
    coverage: dict[str, Array] = field(default_factory=dict)

    def __post_init__(self):
        self.nx = max(int(round(self.width * self.resolution)), 1)
        self.ny = max(int(round(self.height * self.resolution)), 1)

    def grid(self, color: str) -> Array:
        if color not in self.coverage:
            self.coverage[color] = np.zeros((self.ny, self.nx), dtype=np.float32)
        return self.coverage[color]


def _clip_segment(p0: Array, p1: Array, width: float, height: float):
    """Liang-Barsky clip of segment to [0,width]x[0,height]; None if outside."""
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-d[0], p0[0] - 0.0),
        (d[0], width - p0[0]),
        (-d[1], p0[1] - 0.0),
        (d[1], height - p0[1]),
    ):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    if t0 > t1:
        return None
    return p0 + t0 * d, p0 + t1 * d


def deposit_paint(
    canvas: CanvasRaster,
    start: Array,
    end: Array,
    color: str,
    brush_load: float = 1.0,
) -> tuple[float, bool]:
    """Rasterize one brush stroke segment; returns (painted length, clipped).

    Pixels whose centers lie within brush_width/2 of the segment are
    covered; coverage accumulates and saturates at 1.  Segments partly
    outside the canvas are clipped and flagged.
    """
    p0 = np.asarray(start, dtype=float)
    p1 = np.asarray(end, dtype=float)
    clipped_seg = _clip_segment(p0, p1, canvas.width, canvas.height)
    full_len = float(np.linalg.norm(p1 - p0))
    if clipped_seg is None:
        return 0.0, True
    q0, q1 = clipped_seg
    seg_len = float(np.linalg.norm(q1 - q0))
    was_clipped = seg_len < full_len - 1e-12
    grid = canvas.grid(color)
    res = canvas.resolution
    r = canvas.brush_width / 2.0

    lo = np.minimum(q0, q1) - r
    hi = np.maximum(q0, q1) + r
    c0 = max(int(np.floor(lo[0] * res - 0.5)), 0)
    c1 = min(int(np.ceil(hi[0] * res - 0.5)) + 1, canvas.nx)
    r0 = max(int(np.floor(lo[1] * res - 0.5)), 0)
    r1 = min(int(np.ceil(hi[1] * res - 0.5)) + 1, canvas.ny)
    if c0 >= c1 or r0 >= r1:
        return seg_len, was_clipped

    xs = (np.arange(c0, c1) + 0.5) / res
    ys = (np.arange(r0, r1) + 0.5) / res
    px, py = np.meshgrid(xs, ys)
    d = q1 - q0
    L2 = float(d @ d)
    if L2 < 1e-18:
        dist2 = (px - q0[0]) ** 2 + (py - q0[1]) ** 2
    else:
        t = ((px - q0[0]) * d[0] + (py - q0[1]) * d[1]) / L2
        t = np.clip(t, 0.0, 1.0)
        cx = q0[0] + t * d[0]
        cy = q0[1] + t * d[1]
        dist2 = (px - cx) ** 2 + (py - cy) ** 2
    mask = dist2 <= r * r
    sub = grid[r0:r1, c0:c1]
    sub[mask] = np.minimum(1.0, sub[mask] + brush_load)
    return seg_len, was_clipped


def save_raster_png(canvas: CanvasRaster, path: str | Path, palette: dict[str, tuple] | None = None) -> None:
    """Composite all color layers onto white and write a PNG."""
    from PIL import Image

    defaults = {
        "black": (20, 20, 20),
        "red": (200, 30, 30),
        "blue": (30, 60, 200),
        "green": (30, 160, 60),
        "yellow": (230, 200, 30),
    }
    palette = {**defaults, **(palette or {})}
    img = np.full((canvas.ny, canvas.nx, 3), 255.0)
    for i, (color, grid) in enumerate(sorted(canvas.coverage.items())):
        rgb = np.array(palette.get(color, ((60 * i) % 255, 90, 130)), dtype=float)
        alpha = grid.astype(float)[..., None]
        img = img * (1 - alpha) + rgb[None, None, :] * alpha
    # row 0 is the canvas bottom; flip so the PNG reads right side up
    Image.fromarray(np.flipud(img).astype(np.uint8)).save(str(path))


# -- stateful wrapper ---------------------------------------------------------


class Simulator:
    """Owns the plant state, clock, injected anchor offsets, and servo temps."""

    def __init__(
        self,
        geom: RobotGeometry,
        config: SimConfig,
        initial_position: Array,
        rng: np.random.Generator,
    ):
        self.geom = geom
        self.config = config
        self.rng = rng
        offsets = config.anchor_offsets
        if offsets is None and config.anchor_error_std > 0:
            offsets = rng.normal(0.0, config.anchor_error_std, (4, 2))
        self.true_anchors = geom.anchors + (offsets if offsets is not None else 0.0)
        self.state = PlatformState(np.asarray(initial_position, dtype=float))
        self.time = 0.0
        self.servo_temps = np.full(4, config.thermal.ambient)
        self.clamp_events = 0

    def step(self, tensions: Array, check_escape: bool = True) -> PlatformState:
        dist = None
        if self.config.disturbance_force_std > 0:
            dist = self.rng.normal(0.0, self.config.disturbance_force_std, 2)
        self.state, clamped = step(
            self.state, tensions, self.geom, self.config,
            disturbance=dist, anchors=self.true_anchors,
        )
        if clamped:
            self.clamp_events += 1
        self.time += self.config.timestep
        if check_escape:
            # small slack: the escape check flags runaway, not the platform
            # body grazing the frame line during low-altitude maneuvers
            check_in_frame(self.state.position, self.geom, slack=0.02)
        return self.state

    def measure(self) -> Measurement:
        return measure(
            self.state, self.geom, self.config, self.rng,
            timestamp=self.time, servo_temps=self.servo_temps, anchors=self.true_anchors,
        )

    def update_temps(self, arm_active: bool, dt: float) -> None:
        self.servo_temps = update_servo_temps(self.servo_temps, arm_active, dt, self.config.thermal)


# -- measurement log ----------------------------------------------------------

MEASUREMENT_COLUMNS = (
    ["t"]
    + [f"theta{i}" for i in range(1, 5)]
    + [f"l{i}" for i in range(1, 5)]
    + [f"ldot{i}" for i in range(1, 5)]
    + [f"T{i}" for i in range(1, 5)]
)


def write_measurement_log(path: str | Path, measurements: list[Measurement]) -> None:
    """CSV log with the documented column order t, theta1..4, l1..4, ldot1..4, T1..4."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(MEASUREMENT_COLUMNS)
        for m in measurements:
            w.writerow(
                [f"{m.timestamp:.6f}"]
                + [f"{v:.9f}" for v in m.winch_angles]
                + [f"{v:.9f}" for v in m.cable_lengths]
                + [f"{v:.9f}" for v in m.cable_velocities]
                + [f"{v:.3f}" for v in m.servo_temperatures]
            )
