"""Scenario bundles: everything a run needs, with YAML load/save.

A scenario pins the frame geometry, the true plant (including injected
miscalibration), the controller's calibrated knowledge, toolpath limits,
and the session/thermal configuration.  Builders cover the two standard
rigs: the desk-scale mural section and the smaller calibration-ablation
frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import configio
from .control import CostWeights, NoiseModel, PlantModel, TensionLimits
from .coordination import ArmGeometry, SessionConfig
from .geometry import (
    GroundTruthWinch,
    RobotGeometry,
    WinchModel,
    cable_geometry,
    default_geometry,
)
from .simulator import SimConfig, ThermalParams

Array = np.ndarray


@dataclass
class Scenario:
    name: str
    geom: RobotGeometry
    sim: SimConfig
    arm: ArmGeometry
    session: SessionConfig
    limits: TensionLimits
    weights: CostWeights
    noise: NoiseModel
    home: Array  # power-on / approach position (winches zeroed here)
    canvas_origin: Array
    canvas_width: float
    canvas_height: float
    resolution: float  # px/m
    brush_width: float
    calibrated: WinchModel  # what the controller believes (distance convention)
    v_max: float
    a_max: float
    stepover: float
    seed: int

    def plant_model(self) -> PlantModel:
        """The controller's (assumed) plant model."""
        return PlantModel(
            geom=self.geom,
            mass=self.sim.platform_mass,
            damping=self.sim.viscous_damping,
            gravity=self.sim.gravity,
            dt=self.sim.timestep,
        )

    def make_canvas(self):
        from .simulator import CanvasRaster

        return CanvasRaster(self.canvas_width, self.canvas_height, self.resolution, self.brush_width)


def linear_winches_at(geom: RobotGeometry, home: Array, radius: float = 0.01):
    """Ideal single-layer winches zeroed at ``home`` (exactly quadratic-
    representable, so calibration can be exact)."""
    eff0 = cable_geometry(geom, home).effective_lengths
    return tuple(
        GroundTruthWinch(2 * radius, 0.0, wraps_per_layer=10_000, zero_offset=eff0[i])
        for i in range(4)
    )


def layered_winches_at(
    geom: RobotGeometry,
    home: Array,
    base_diameter: float = 0.02,
    thickness: float = 0.0006,
    wraps_per_layer: int = 20,
):
    """Realistic layered drums zeroed at ``home`` (quadratic fit leaves a
    residual; this is the miscalibration source for the ablation)."""
    eff0 = cable_geometry(geom, home).effective_lengths
    return tuple(
        GroundTruthWinch(base_diameter, thickness, wraps_per_layer, zero_offset=eff0[i])
        for i in range(4)
    )


def exact_calibration(geom: RobotGeometry, winches) -> WinchModel:
    """Distance-convention quadratic equal to single-layer true winches."""
    coeffs = np.zeros((4, 3))
    for i, w in enumerate(winches):
        if w.cable_thickness != 0.0:
            raise ValueError("exact calibration only exists for single-layer winches")
        r = geom.routing_ratio[i]
        coeffs[i] = [w.zero_offset / r, (w.base_diameter / 2.0) / r, 0.0]
    return WinchModel(coeffs, convention="distance")


def desk_scenario(
    seed: int = 0,
    noise_std: float = 1e-3,
    disturbance_std: float = 0.2,
    mass: float = 8.0,
    thermal: ThermalParams | None = None,
    inject_errors: bool = False,
    anchor_error_range: tuple[float, float] = (0.005, 0.020),
) -> Scenario:
    """Desk-scale mural rig: 3.4 x 3.2 m frame, 2.9 x 1.85 m canvas.

    With inject_errors=False the winches are ideal and the controller's
    calibration is exact.  With inject_errors=True the rig gets layered
    drums and misplaced anchors like the ablation scenario does, and
    ``calibrated`` holds only the nominal initialization (the full
    pipeline is expected to calibrate before painting)."""
    geom = default_geometry(3.4, 3.2, 0.15, 0.10, winch_diameter=0.02)
    home = np.array([1.7, 0.5])
    anchor_offsets = None
    if inject_errors:
        winches = layered_winches_at(geom, home, thickness=0.0004, wraps_per_layer=25)
        rng = np.random.default_rng(seed)
        lo, hi = anchor_error_range
        common_mag = rng.uniform(0.55 * hi, 0.75 * hi)
        common_dir = rng.uniform(0, 2 * np.pi)
        common = common_mag * np.array([np.cos(common_dir), np.sin(common_dir)])
        indiv_mag = rng.uniform(lo / 2.0, lo, 4)
        indiv_dir = rng.uniform(0, 2 * np.pi, 4)
        anchor_offsets = common[None, :] + indiv_mag[:, None] * np.stack(
            [np.cos(indiv_dir), np.sin(indiv_dir)], axis=1
        )
        norms = np.linalg.norm(anchor_offsets, axis=1)
        anchor_offsets = anchor_offsets * (np.clip(norms, lo, hi) / norms)[:, None]
        eff0 = cable_geometry(geom, home).effective_lengths
        calibrated = WinchModel(
            np.stack(
                [eff0 / geom.routing_ratio, (0.02 / 2.0) / geom.routing_ratio, np.zeros(4)],
                axis=1,
            ),
            convention="distance",
        )
    else:
        winches = linear_winches_at(geom, home)
        calibrated = None
    sim = SimConfig(
        platform_mass=mass,
        viscous_damping=6.0,
        sensor_noise_std_length=noise_std,
        sensor_noise_std_velocity=noise_std,
        disturbance_force_std=disturbance_std,
        ground_truth_winches=winches,
        anchor_offsets=anchor_offsets,
        thermal=thermal or ThermalParams(),
    )
    return Scenario(
        name="desk",
        geom=geom,
        sim=sim,
        arm=ArmGeometry(),
        session=SessionConfig(),
        limits=TensionLimits(0.0, 150.0),
        weights=CostWeights(),
        noise=NoiseModel(length_noise_std=max(noise_std, 1e-4), velocity_noise_std=max(noise_std, 1e-4)),
        home=home,
        canvas_origin=np.array([0.25, 0.45]),
        canvas_width=2.9,
        canvas_height=1.85,
        resolution=400.0,
        brush_width=0.06,
        calibrated=calibrated if inject_errors else exact_calibration(geom, winches),
        v_max=0.25,
        a_max=0.5,
        stepover=0.15,
        seed=seed,
    )


def ablation_scenario(
    seed: int = 0,
    anchor_error_range: tuple[float, float] = (0.005, 0.020),
    encoder_noise: float = 1e-3,
) -> Scenario:
    """The smaller 3 x 2.4 m test rig with layered drums and misplaced
    anchors; the controller's assumed anchors stay at the design corners.

    The placement error has a common-mode part (the whole frame measured
    slightly off against the site, which proprioceptive data cannot
    observe at all) plus independent per-anchor parts; every anchor's
    total displacement is kept inside ``anchor_error_range``."""
    geom = default_geometry(3.0, 2.4, 0.15, 0.10, winch_diameter=0.02)
    home = np.array([1.5, 0.5])
    rng = np.random.default_rng(seed)
    lo, hi = anchor_error_range
    common_mag = rng.uniform(0.55 * hi, 0.75 * hi)
    common_dir = rng.uniform(0, 2 * np.pi)
    common = common_mag * np.array([np.cos(common_dir), np.sin(common_dir)])
    indiv_mag = rng.uniform(lo / 2.0, lo, 4)
    indiv_dir = rng.uniform(0, 2 * np.pi, 4)
    offsets = common[None, :] + indiv_mag[:, None] * np.stack(
        [np.cos(indiv_dir), np.sin(indiv_dir)], axis=1
    )
    # keep each anchor's total displacement inside the specified band
    norms = np.linalg.norm(offsets, axis=1)
    offsets = offsets * (np.clip(norms, lo, hi) / norms)[:, None]
    winches = layered_winches_at(geom, home, thickness=0.0004, wraps_per_layer=25)
    sim = SimConfig(
        platform_mass=8.0,
        viscous_damping=6.0,
        sensor_noise_std_length=encoder_noise,
        sensor_noise_std_velocity=encoder_noise,
        ground_truth_winches=winches,
        anchor_offsets=offsets,
    )
    # nominal-radius initialization in distance convention
    eff0 = cable_geometry(geom, home).effective_lengths
    init = WinchModel(
        np.stack(
            [
                eff0 / geom.routing_ratio,
                (0.02 / 2.0) / geom.routing_ratio,
                np.zeros(4),
            ],
            axis=1,
        ),
        convention="distance",
    )
    return Scenario(
        name="ablation",
        geom=geom,
        sim=sim,
        arm=ArmGeometry(),
        session=SessionConfig(),
        limits=TensionLimits(0.0, 150.0),
        weights=CostWeights(),
        noise=NoiseModel(),
        home=home,
        canvas_origin=np.array([0.3, 0.3]),
        canvas_width=2.4,
        canvas_height=1.8,
        resolution=300.0,
        brush_width=0.06,
        calibrated=init,  # before calibration: nominal initialization
        v_max=0.25,
        a_max=0.5,
        stepover=0.15,
        seed=seed,
    )


# -- YAML ----------------------------------------------------------------------

def save_scenario(path: str | Path, sc: Scenario) -> None:
    w = sc.sim.ground_truth_winches
    configio.write_tagged(
        path,
        "scenario",
        {
            "name": sc.name,
            "geometry": {
                "anchors_m": sc.geom.anchors.tolist(),
                "attachments_m": sc.geom.attachments.tolist(),
                "routing_ratio": [int(r) for r in sc.geom.routing_ratio],
                "winch_nominal_diameter_m": sc.geom.winch_nominal_diameter.tolist(),
                "frame_width_m": sc.geom.frame_width,
                "frame_height_m": sc.geom.frame_height,
                "workspace_margin_m": sc.geom.workspace_margin,
            },
            "sim": {
                "platform_mass_kg": sc.sim.platform_mass,
                "gravity_mps2": sc.sim.gravity,
                "viscous_damping_nspm": sc.sim.viscous_damping,
                "timestep_s": sc.sim.timestep,
                "sensor_noise_std_length_m": sc.sim.sensor_noise_std_length,
                "sensor_noise_std_velocity_mps": sc.sim.sensor_noise_std_velocity,
                "disturbance_force_std_n": sc.sim.disturbance_force_std,
                "anchor_offsets_m": None if sc.sim.anchor_offsets is None else sc.sim.anchor_offsets.tolist(),
                "ground_truth_winches": [
                    {
                        "base_diameter_m": wi.base_diameter,
                        "cable_thickness_m": wi.cable_thickness,
                        "wraps_per_layer": wi.wraps_per_layer,
                        "zero_offset_m": wi.zero_offset,
                    }
                    for wi in w
                ],
                "thermal": {
                    "k_heat_cps": sc.sim.thermal.k_heat,
                    "k_cool_hz": sc.sim.thermal.k_cool,
                    "ambient_c": sc.sim.thermal.ambient,
                },
            },
            "limits_n": [sc.limits.u_min, sc.limits.u_max],
            "home_m": sc.home.tolist(),
            "canvas": {
                "origin_m": sc.canvas_origin.tolist(),
                "width_m": sc.canvas_width,
                "height_m": sc.canvas_height,
                "resolution_px_per_m": sc.resolution,
                "brush_width_m": sc.brush_width,
            },
            "calibrated_winch_coeffs": sc.calibrated.to_distance(sc.geom.routing_ratio).coeffs.tolist(),
            "toolpath": {"v_max_mps": sc.v_max, "a_max_mps2": sc.a_max, "stepover_m": sc.stepover},
            "seed": sc.seed,
        },
    )


def load_scenario(path: str | Path) -> Scenario:
    doc = configio.read_tagged(path, "scenario")
    g = doc["geometry"]
    geom = RobotGeometry(
        anchors=np.array(g["anchors_m"], dtype=float),
        attachments=np.array(g["attachments_m"], dtype=float),
        routing_ratio=np.array(g["routing_ratio"], dtype=float),
        winch_nominal_diameter=np.array(g["winch_nominal_diameter_m"], dtype=float),
        frame_width=float(g["frame_width_m"]),
        frame_height=float(g["frame_height_m"]),
        workspace_margin=float(g.get("workspace_margin_m", 0.05)),
    )
    s = doc["sim"]
    winches = tuple(
        GroundTruthWinch(
            float(wi["base_diameter_m"]),
            float(wi["cable_thickness_m"]),
            int(wi["wraps_per_layer"]),
            float(wi["zero_offset_m"]),
        )
        for wi in s["ground_truth_winches"]
    )
    th = s.get("thermal", {})
    sim = SimConfig(
        platform_mass=float(s["platform_mass_kg"]),
        gravity=float(s["gravity_mps2"]),
        viscous_damping=float(s["viscous_damping_nspm"]),
        timestep=float(s["timestep_s"]),
        sensor_noise_std_length=float(s["sensor_noise_std_length_m"]),
        sensor_noise_std_velocity=float(s["sensor_noise_std_velocity_mps"]),
        disturbance_force_std=float(s["disturbance_force_std_n"]),
        anchor_offsets=None if s.get("anchor_offsets_m") is None else np.array(s["anchor_offsets_m"]),
        ground_truth_winches=winches,
        thermal=ThermalParams(
            k_heat=float(th.get("k_heat_cps", 1.5)),
            k_cool=float(th.get("k_cool_hz", 0.05)),
            ambient=float(th.get("ambient_c", 25.0)),
        ),
    )
    c = doc["canvas"]
    tp = doc["toolpath"]
    return Scenario(
        name=doc.get("name", "scenario"),
        geom=geom,
        sim=sim,
        arm=ArmGeometry(),
        session=SessionConfig(),
        limits=TensionLimits(*[float(v) for v in doc["limits_n"]]),
        weights=CostWeights(),
        noise=NoiseModel(),
        home=np.array(doc["home_m"], dtype=float),
        canvas_origin=np.array(c["origin_m"], dtype=float),
        canvas_width=float(c["width_m"]),
        canvas_height=float(c["height_m"]),
        resolution=float(c["resolution_px_per_m"]),
        brush_width=float(c["brush_width_m"]),
        calibrated=WinchModel(np.array(doc["calibrated_winch_coeffs"], dtype=float), convention="distance"),
        v_max=float(tp["v_max_mps"]),
        a_max=float(tp["a_max_mps2"]),
        stepover=float(tp["stepover_m"]),
        seed=int(doc.get("seed", 0)),
    )
