"""Tracking metrics, raster comparison, and the calibration ablation.

The ablation reproduces the four-pipeline comparison on the small test
rig: proprioceptive-only, joint optimization, single homography, and
2x2 piecewise homography, all evaluated by the true position the robot
settles at when its internal estimate reaches the commanded point.
That quasi-static evaluation isolates calibration error from the
(sub-millimeter) closed-loop tracking error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .artwork import PaintProgram
from .calibration import (
    CalibrationDataset,
    build_piecewise_map,
    solve_joint,
    solve_proprioceptive,
    synth_drag_path,
    generate_grid_excitation,
)
from .calibration.winch import batch_positions_from_lengths, _predict
from .errors import PreconditionError
from .geometry import RobotGeometry, WinchModel, cable_geometry
from .scenario import Scenario
from .simulator import CanvasRaster, deposit_paint

Array = np.ndarray


# -- metrics -------------------------------------------------------------------

def average_tracking_error(measured: Array, reference: Array) -> float:
    """Mean euclidean distance between time-aligned traces."""
    measured = np.asarray(measured, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if measured.shape != reference.shape:
        raise PreconditionError(
            f"trace length mismatch: {measured.shape} vs {reference.shape}"
        )
    return float(np.mean(np.linalg.norm(measured - reference, axis=1)))


def max_tracking_error(measured: Array, reference: Array) -> float:
    measured = np.asarray(measured, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if measured.shape != reference.shape:
        raise PreconditionError("trace length mismatch")
    return float(np.max(np.linalg.norm(measured - reference, axis=1)))


def coverage_agreement(design: CanvasRaster, painted: CanvasRaster) -> dict[str, float]:
    """Per-color Dice coefficient between binarized coverage rasters."""
    scores = {}
    for color in design.coverage:
        a = design.coverage[color] > 0.5
        b = painted.grid(color) > 0.5
        denom = int(a.sum()) + int(b.sum())
        scores[color] = 2.0 * int((a & b).sum()) / denom if denom else 1.0
    return scores


def render_program_design(
    program: PaintProgram, canvas: CanvasRaster, origin: Array, decimate: int = 10
) -> float:
    """Rasterize the as-designed engaged strokes; returns painted length."""
    origin = np.asarray(origin, dtype=float)
    total = 0.0
    for stroke in program.strokes:
        if not stroke.engaged:
            continue
        pts = stroke.positions[::decimate]
        if not np.array_equal(pts[-1], stroke.positions[-1]):
            pts = np.vstack([pts, stroke.positions[-1]])
        for a, b in zip(pts[:-1], pts[1:]):
            d, _ = deposit_paint(canvas, a - origin, b - origin, program.color)
            total += d
    return total


# -- true-system synthesis -----------------------------------------------------


def true_angles_at(
    geom: RobotGeometry, true_anchors: Array, winches, positions: Array
) -> Array:
    """Encoder angles the true system reports at given true positions."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    delta = true_anchors[None, :, :] - (positions[:, None, :] + geom.attachments[None, :, :])
    eff = geom.routing_ratio[None, :] * np.linalg.norm(delta, axis=2)
    theta = np.empty_like(eff)
    for i in range(4):
        theta[:, i] = winches[i].angle_for_length(eff[:, i])
    return theta


def estimated_position(
    geom: RobotGeometry, calib: WinchModel, theta: Array, x0: Array | None = None
) -> Array:
    """The robot's internal estimate: calibrated FK on encoder angles."""
    pred = _predict(np.atleast_2d(theta), calib.coeffs)
    return batch_positions_from_lengths(geom, pred, x0=x0)


def settle_position(
    geom: RobotGeometry,
    true_anchors: Array,
    winches,
    calib: WinchModel,
    command: Array,
    x0: Array | None = None,
    iters: int = 40,
) -> Array:
    """True position where the internal estimate equals ``command``.

    The closed loop drives the calibrated distance estimates to the
    commanded point's predicted distances; quasi-statically that means
    l(theta_true(x); p) = dist(command) per cable, solved for x by
    Gauss-Newton with the winch/geometry chain rule.
    """
    command = np.asarray(command, dtype=float)
    target = np.linalg.norm(
        geom.anchors - (command[None, :] + geom.attachments), axis=1
    )
    x = command.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    p = calib.coeffs
    for _ in range(iters):
        delta = true_anchors - (x[None, :] + geom.attachments)
        dist = np.maximum(np.linalg.norm(delta, axis=1), 1e-12)
        units = delta / dist[:, None]
        eff = geom.routing_ratio * dist
        theta = np.array([winches[i].angle_for_length(eff[i]) for i in range(4)])
        pred = p[:, 0] + p[:, 1] * theta + p[:, 2] * theta * theta
        r = pred - target
        # dr/dx = l'(theta) * dtheta/deff * deff/dx
        lprime = p[:, 1] + 2 * p[:, 2] * theta
        slope = np.array([winches[i].slope(theta[i]) for i in range(4)])
        J = (lprime / slope)[:, None] * (-geom.routing_ratio[:, None] * units)
        g = J.T @ r
        H = J.T @ J + 1e-12 * np.eye(2)
        step = np.linalg.solve(H, -g)
        x = x + step
        if np.linalg.norm(step) < 1e-13:
            break
    return x


# -- the ablation ----------------------------------------------------------------


@dataclass
class AblationResult:
    ate: dict[str, float]
    max_err: dict[str, float]
    stage1_rms: float
    stage2_rms: float
    piecewise_map: object
    single_map: object


def true_anchor_positions(sc: Scenario) -> Array:
    return sc.geom.anchors + (
        sc.sim.anchor_offsets if sc.sim.anchor_offsets is not None else 0.0
    )


def synth_dataset(sc: Scenario, positions: Array, rng, provenance: str) -> CalibrationDataset:
    """Encoder-angle dataset the true system would record along ``positions``."""
    theta = true_angles_at(sc.geom, true_anchor_positions(sc), sc.sim.ground_truth_winches, positions)
    enc_noise = sc.sim.sensor_noise_std_length
    if enc_noise > 0:
        # angle noise consistent with millimeter-level length sensing
        theta = theta + rng.normal(0, enc_noise / 0.01, theta.shape)
    return CalibrationDataset(theta, np.arange(len(positions)) / 20.0, provenance=provenance)


def calibrate_two_stage(sc: Scenario, rng):
    """Operator-drag stage then grid-sweep stage; returns both results."""
    geom = sc.geom
    lo = np.array([0.3, 0.3])
    hi1 = np.array([geom.frame_width - 0.3, min(1.5, geom.frame_height - 0.3)])
    drag = synth_drag_path(lo, hi1, 180.0, 20.0, rng)
    stage1 = solve_proprioceptive(synth_dataset(sc, drag, rng, "manual-stage-1"), geom, sc.calibrated)

    hi2 = np.array([geom.frame_width - 0.3, geom.frame_height - 0.3])
    grid = generate_grid_excitation(lo, hi2, 0.5, dt=0.01)
    samples = grid.trajectory.positions[:: max(len(grid.trajectory.positions) // 600, 1)]
    stage2 = solve_proprioceptive(synth_dataset(sc, samples, rng, "grid-stage-2"), geom, stage1.model)
    return stage1, stage2, samples


def capture_grid(sc: Scenario, calib: WinchModel, shape=(3, 3)):
    """Simulated operator capture: true platform on each grid mark, the
    internal estimate recorded; returns (true_grid, measured_grid)."""
    geom = sc.geom
    winches = sc.sim.ground_truth_winches
    anchors = true_anchor_positions(sc)
    cx0, cy0 = sc.canvas_origin
    gxs = np.linspace(cx0, cx0 + sc.canvas_width, shape[1])
    gys = np.linspace(cy0, cy0 + sc.canvas_height, shape[0])
    true_grid = np.zeros((*shape, 2))
    measured_grid = np.zeros((*shape, 2))
    for i, gy in enumerate(gys):
        for j, gx in enumerate(gxs):
            g = np.array([gx, gy])
            theta = true_angles_at(geom, anchors, winches, g)[0]
            true_grid[i, j] = g
            measured_grid[i, j] = estimated_position(geom, calib, theta, x0=g[None, :])[0]
    return true_grid, measured_grid


def run_ablation(sc: Scenario, n_eval: int = 200) -> AblationResult:
    """Four calibration pipelines on the small rig, common test trajectory.

    Capture points are the 9-grid (3x3) over the canvas region; the
    single homography uses the 4 outer corners of the same grid.
    """
    rng = np.random.default_rng(sc.seed + 1000)
    geom = sc.geom
    winches = sc.sim.ground_truth_winches
    true_anchors = true_anchor_positions(sc)
    enc_noise = sc.sim.sensor_noise_std_length

    stage1, proprio, samples = calibrate_two_stage(sc, rng)
    true_grid, measured_grid = capture_grid(sc, proprio.model)
    cx0, cy0 = sc.canvas_origin

    piecewise = build_piecewise_map(true_grid, measured_grid)
    single = build_piecewise_map(true_grid[::2, ::2], measured_grid[::2, ::2])

    # joint optimization: the same capture configurations appended to the
    # stage-2 data as labeled samples
    capture_pos = true_grid.reshape(-1, 2)
    joint_positions = np.vstack([samples, capture_pos])
    base = synth_dataset(sc, joint_positions, rng, "grid-stage-2")
    labels = np.full((len(joint_positions), 2), np.nan)
    labels[len(samples):] = capture_pos
    data_joint = CalibrationDataset(base.theta, base.timestamps, labels, base.provenance)
    joint = solve_joint(data_joint, geom, stage1.model)

    # common test trajectory: serpentine across the canvas region
    ys = np.linspace(cy0 + 0.1, cy0 + sc.canvas_height - 0.1, 5)
    pts = []
    for i, y in enumerate(ys):
        xs_line = np.linspace(cx0 + 0.1, cx0 + sc.canvas_width - 0.1, n_eval // 5)
        if i % 2:
            xs_line = xs_line[::-1]
        pts.extend((x, y) for x in xs_line)
    test_traj = np.asarray(pts)

    def evaluate(calib_model: WinchModel, warp_map=None) -> tuple[float, float]:
        errs = np.empty(len(test_traj))
        x_guess = None
        for k, t in enumerate(test_traj):
            cmd = warp_map.warp(t) if warp_map is not None else t
            y = settle_position(geom, true_anchors, winches, calib_model, cmd, x0=x_guess)
            x_guess = y
            errs[k] = np.linalg.norm(y - t)
        return float(np.mean(errs)), float(np.max(errs))

    ate, max_err = {}, {}
    ate["proprioceptive"], max_err["proprioceptive"] = evaluate(proprio.model)
    ate["joint"], max_err["joint"] = evaluate(joint.model)
    ate["single_homography"], max_err["single_homography"] = evaluate(proprio.model, single)
    ate["piecewise_homography"], max_err["piecewise_homography"] = evaluate(proprio.model, piecewise)

    return AblationResult(
        ate=ate,
        max_err=max_err,
        stage1_rms=stage1.residual_rms,
        stage2_rms=proprio.residual_rms,
        piecewise_map=piecewise,
        single_map=single,
    )
