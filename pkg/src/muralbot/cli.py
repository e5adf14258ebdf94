"""Command-line entry points: sim, calibrate, gains, paint, eval, serve.

Artifacts flow between commands through the working directory: calibrate
writes winch/homography files, gains writes schedules and program CSVs,
paint consumes both and emits the canvas, traces, and the session event
log.  Every run writes a manifest recording inputs and the seed so that
identical manifests reproduce byte-identical CSV outputs.

Exit codes: 0 success, 2 precondition/schema failures, 3 aborted
sessions, 4 numerical failures.
"""

from __future__ import annotations

import csv
import sys
from pathlib import Path

import click
import numpy as np

from . import configio
from .artwork import compile_program, load_artwork, load_program_csv, save_program_csv
from .calibration import (
    CalibrationDataset,
    build_piecewise_map,
    load_homography_map,
    save_dataset_csv,
    save_homography_map,
    solve_joint,
    solve_proprioceptive,
    synth_drag_path,
    generate_grid_excitation,
    warp_trajectory,
)
from .control import load_schedule, save_schedule, solve_nominal, synthesize_schedule, dump_schedule_text
from .coordination import EventLog, build_session_timeline
from .errors import (
    MuralbotError,
    NumericalError,
    PreconditionError,
    SessionAborted,
)
from .evaluation import (
    average_tracking_error,
    coverage_agreement,
    max_tracking_error,
    render_program_design,
    true_angles_at,
)
from .geometry import WinchModel
from .runner import manual_goto, run_paint_session
from .scenario import Scenario, load_scenario
from .simulator import Simulator, save_raster_png

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_ABORTED = 3
EXIT_NUMERICAL = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_scenario(path: str) -> Scenario:
    return load_scenario(path)


def _write_manifest(outdir: Path, **fields) -> None:
    configio.write_tagged(outdir / "manifest.yaml", "manifest", fields)


def _save_winch(path: Path, model: WinchModel, residual: float, report: dict) -> None:
    configio.write_tagged(
        path,
        "winch-calibration",
        {
            "convention": model.convention,
            "coeffs": model.coeffs.tolist(),
            "residual_rms_m": residual,
            "report": {k: (v if isinstance(v, (int, float, bool, str)) else str(v)) for k, v in report.items()},
        },
    )


def _load_winch(path: Path) -> WinchModel:
    doc = configio.read_tagged(path, "winch-calibration")
    return WinchModel(np.array(doc["coeffs"], dtype=float), convention=doc["convention"])


def _residual_histogram(residual_rms: float, positions) -> str:
    lines = [f"residual RMS: {residual_rms * 1000:.3f} mm", f"samples: {len(positions)}"]
    return "\n".join(lines)


@click.group()
def main():
    """Mural-painting cable robot toolkit."""


@main.command("scenario")
@click.option("--name", type=click.Choice(["desk", "ablation"]), default="desk", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
def cmd_scenario(name, out_path, seed):
    """Write one of the built-in scenarios to a YAML file."""
    from .scenario import ablation_scenario, desk_scenario, save_scenario

    sc = desk_scenario(seed=seed) if name == "desk" else ablation_scenario(seed=seed)
    save_scenario(out_path, sc)
    click.echo(f"wrote {name} scenario (seed {seed}) to {out_path}")


@main.command("sim")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--duration", default=5.0, show_default=True, help="seconds to hold at home")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", default=None, type=int, help="override the scenario seed")
def cmd_sim(scenario_path, duration, out_path, seed):
    """Hold at home under gravity compensation; log measurements to CSV."""
    sc = _load_scenario(scenario_path)
    seed = sc.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    sim = Simulator(sc.geom, sc.sim, sc.home, rng)
    from .control import gravity_compensation
    from .simulator import write_measurement_log

    measurements = []
    ticks = int(duration * 100)
    for _ in range(ticks):
        u, _ = gravity_compensation(
            sim.state.position, sc.geom, sc.sim.platform_mass, sc.limits,
            descent_force=0.0, gravity=sc.sim.gravity,
        )
        for _ in range(10):
            sim.step(u)
        measurements.append(sim.measure())
    write_measurement_log(out_path, measurements)
    click.echo(f"wrote {len(measurements)} measurements to {out_path}")


@main.command("calibrate")
@click.option("--stage", type=click.Choice(["1", "2", "joint", "extero"]), required=True)
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--workdir", required=True, type=click.Path())
@click.option("--points", "points_path", type=click.Path(exists=True), help="captured point file (joint/extero)")
@click.option("--seed", default=None, type=int)
def cmd_calibrate(stage, scenario_path, workdir, points_path, seed):
    """Run a calibration stage; artifacts land in the working directory."""
    sc = _load_scenario(scenario_path)
    seed = sc.seed if seed is None else seed
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed + 100)
    geom = sc.geom
    winches = sc.sim.ground_truth_winches
    true_anchors = geom.anchors + (
        sc.sim.anchor_offsets if sc.sim.anchor_offsets is not None else 0.0
    )
    enc_noise = sc.sim.sensor_noise_std_length

    def dataset_at(positions, provenance):
        theta = true_angles_at(geom, true_anchors, winches, positions)
        if enc_noise > 0:
            theta = theta + rng.normal(0, enc_noise / 0.01, theta.shape)
        return CalibrationDataset(theta, np.arange(len(positions)) / 20.0, provenance=provenance)

    stage1_path = workdir / "winch-stage1.yaml"
    stage2_path = workdir / "winch-stage2.yaml"

    if stage == "1":
        lo = np.array([0.3, 0.3])
        hi = np.array([geom.frame_width - 0.3, min(1.5, geom.frame_height - 0.3)])
        drag = synth_drag_path(lo, hi, 180.0, 20.0, rng)
        data = dataset_at(drag, "manual-stage-1")
        save_dataset_csv(workdir / "stage1-data.csv", data)
        result = solve_proprioceptive(data, geom, sc.calibrated)
        _save_winch(stage1_path, result.model, result.residual_rms, result.report)
        (workdir / "stage1-report.txt").write_text(
            _residual_histogram(result.residual_rms, result.positions)
        )
        click.echo(f"stage 1: residual {result.residual_rms * 1000:.3f} mm -> {stage1_path}")
    elif stage == "2":
        if not stage1_path.exists():
            _fail(EXIT_PRECONDITION, f"stage 2 requires {stage1_path}; run --stage 1 first")
        init = _load_winch(stage1_path)
        lo = np.array([0.3, 0.3])
        hi = np.array([geom.frame_width - 0.3, geom.frame_height - 0.3])
        grid = generate_grid_excitation(lo, hi, 0.5, dt=0.01)
        samples = grid.trajectory.positions[:: max(len(grid.trajectory.positions) // 600, 1)]
        data = dataset_at(samples, "grid-stage-2")
        save_dataset_csv(workdir / "stage2-data.csv", data)
        result = solve_proprioceptive(data, geom, init)
        _save_winch(stage2_path, result.model, result.residual_rms, result.report)
        (workdir / "stage2-report.txt").write_text(
            _residual_histogram(result.residual_rms, result.positions)
        )
        click.echo(f"stage 2: residual {result.residual_rms * 1000:.3f} mm -> {stage2_path}")
    elif stage == "joint":
        if not stage1_path.exists():
            _fail(EXIT_PRECONDITION, f"joint solve requires {stage1_path}; run --stage 1 first")
        if not points_path:
            _fail(EXIT_PRECONDITION, "joint solve requires --points (captured point file)")
        init = _load_winch(stage1_path)
        pts = _read_points(points_path)
        lo = np.array([0.3, 0.3])
        hi = np.array([geom.frame_width - 0.3, geom.frame_height - 0.3])
        grid = generate_grid_excitation(lo, hi, 0.5, dt=0.01)
        samples = grid.trajectory.positions[:: max(len(grid.trajectory.positions) // 600, 1)]
        positions = np.vstack([samples, [p[0] for p in pts]])
        data = dataset_at(positions, "grid-stage-2")
        labels = np.full((len(positions), 2), np.nan)
        labels[len(samples):] = [p[0] for p in pts]
        data = CalibrationDataset(data.theta, data.timestamps, labels, data.provenance)
        result = solve_joint(data, geom, init)
        _save_winch(workdir / "winch-joint.yaml", result.model, result.residual_rms, result.report)
        click.echo(f"joint: residual {result.residual_rms * 1000:.3f} mm")
    else:  # extero
        if not points_path:
            _fail(EXIT_PRECONDITION, "extero requires --points (captured point file)")
        pts = _read_points(points_path)
        n = len(pts)
        side = int(round(np.sqrt(n)))
        if side * side != n or side < 2:
            _fail(EXIT_PRECONDITION, f"need a square grid of points (got {n})")
        true_pts = np.array([p[0] for p in pts])
        meas_pts = np.array([p[1] for p in pts])
        order = np.lexsort((true_pts[:, 0], true_pts[:, 1]))
        true_grid = true_pts[order].reshape(side, side, 2)
        meas_grid = meas_pts[order].reshape(side, side, 2)
        hmap = build_piecewise_map(true_grid, meas_grid)
        save_homography_map(workdir / "homography-map.yaml", hmap)
        click.echo(f"extero: {hmap.n_sections} sections -> {workdir / 'homography-map.yaml'}")


def _read_points(path) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    with open(path) as f:
        for row in csv.DictReader(f):
            out.append(
                (
                    np.array([float(row["true_x"]), float(row["true_y"])]),
                    np.array([float(row["est_x"]), float(row["est_y"])]),
                )
            )
    return out


@main.command("gains")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--artwork", "artwork_path", required=True, type=click.Path(exists=True))
@click.option("--workdir", required=True, type=click.Path())
@click.option("--warp", "warp_path", type=click.Path(exists=True), help="homography map to apply")
@click.option("--winch", "winch_path", type=click.Path(exists=True), help="calibrated winch file")
@click.option("--seed", default=None, type=int)
def cmd_gains(scenario_path, artwork_path, workdir, warp_path, winch_path, seed):
    """Compile artwork, retime, warp, and synthesize per-color schedules."""
    sc = _load_scenario(scenario_path)
    seed = sc.seed if seed is None else seed
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    doc = load_artwork(artwork_path)
    hmap = load_homography_map(warp_path) if warp_path else None
    programs = compile_program(
        doc, stepover=sc.stepover, v_max=sc.v_max, a_max=sc.a_max,
        dt=sc.sim.timestep, start_position=sc.home - sc.canvas_origin,
    )
    plant = sc.plant_model()
    colors = []
    for prog in programs:
        timeline = build_session_timeline(prog, sc.session, sc.arm, dt=sc.sim.timestep, origin=sc.canvas_origin)
        positions = timeline.positions
        if hmap is not None:
            positions = warp_trajectory(hmap, positions)
        nominal = solve_nominal(plant, positions, sc.limits, sc.weights)
        schedule = synthesize_schedule(plant, nominal, sc.limits, sc.weights, sc.noise)
        save_schedule(workdir / f"gains-{prog.color}.mbgs", schedule)
        dump_schedule_text(workdir / f"gains-{prog.color}.txt", schedule, stride=1000)
        save_program_csv(workdir / f"program-{prog.color}.csv", prog)
        colors.append(prog.color)
        click.echo(
            f"{prog.color}: horizon {schedule.n}, "
            f"iLQG iters {nominal.report.iterations}, cost {nominal.report.final_cost:.3e}"
        )
    _write_manifest(
        workdir, scenario=str(scenario_path), artwork=str(artwork_path),
        warp=str(warp_path) if warp_path else None, seed=seed, colors=colors,
    )


@main.command("paint")
@click.option("--workdir", required=True, type=click.Path(exists=True))
@click.option("--seed", default=None, type=int)
@click.option("--winch", "winch_path", type=click.Path(exists=True), help="calibrated winch file")
def cmd_paint(workdir, seed, winch_path):
    """Run the painting sessions from a prepared working directory."""
    workdir = Path(workdir)
    manifest = configio.read_tagged(workdir / "manifest.yaml", "manifest")
    sc = _load_scenario(manifest["scenario"])
    seed = (manifest.get("seed", sc.seed) if seed is None else seed) or 0
    calibrated = _load_winch(Path(winch_path)) if winch_path else sc.calibrated

    rng = np.random.default_rng(seed)
    sim = Simulator(sc.geom, sc.sim, sc.home, rng)
    canvas = sc.make_canvas()
    log = EventLog()
    clock = 0.0
    traces = []
    try:
        for color in manifest["colors"]:
            prog = load_program_csv(workdir / f"program-{color}.csv")
            schedule = load_schedule(workdir / f"gains-{color}.mbgs")
            timeline = build_session_timeline(prog, sc.session, sc.arm, dt=sc.sim.timestep, origin=sc.canvas_origin)
            if timeline.n - 1 != schedule.n:
                _fail(EXIT_PRECONDITION, f"{color}: timeline/schedule length mismatch")
            if not manual_goto(sim, sc.geom, calibrated, schedule.x_nom[0, :2], sc.limits):
                _fail(EXIT_ABORTED, f"{color}: manual approach failed to settle")
            result = run_paint_session(
                sim, schedule, timeline, calibrated, sc.session, log,
                canvas=canvas, canvas_origin=sc.canvas_origin, session_clock_offset=clock,
            )
            traces.append((color, result))
            clock += len(result.trace.times) * sc.sim.timestep + sc.session.color_swap_duration
            if not result.completed:
                log.write(workdir / "events.log")
                _fail(EXIT_ABORTED, f"{color}: session aborted ({result.abort_reason})")
            click.echo(
                f"{color}: painted {result.painted_length:.2f} m, "
                f"tracking RMS {result.trace.rms_error() * 1000:.2f} mm"
            )
    finally:
        log.write(workdir / "events.log")

    save_raster_png(canvas, workdir / "canvas.png")
    np.savez_compressed(
        workdir / "canvas.npz", **{c: g for c, g in canvas.coverage.items()}
    )
    with open(workdir / "trace.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "color", "true_x", "true_y", "est_x", "est_y", "nom_x", "nom_y"])
        t0 = 0.0
        for color, result in traces:
            tr = result.trace
            for i in range(0, len(tr.times), 10):
                w.writerow(
                    [f"{t0 + tr.times[i]:.3f}", color]
                    + [f"{v:.6f}" for v in tr.true_xy[i]]
                    + [f"{v:.6f}" for v in tr.est_xy[i]]
                    + [f"{v:.6f}" for v in tr.nominal_xy[i]]
                )
            t0 += tr.times[-1] if len(tr.times) else 0.0
    click.echo(f"canvas, trace, and event log written to {workdir}")


@main.command("eval")
@click.option("--trace", "trace_path", type=click.Path(exists=True))
@click.option("--reference", "reference_path", type=click.Path(exists=True))
@click.option("--design", "design_path", type=click.Path(exists=True), help="artwork file")
@click.option("--painted", "painted_path", type=click.Path(exists=True), help="canvas.npz from paint")
@click.option("--scenario", "scenario_path", type=click.Path(exists=True))
def cmd_eval(trace_path, reference_path, design_path, painted_path, scenario_path):
    """Tracking metrics (trace vs reference) or raster agreement (design vs painted)."""
    did_something = False
    if trace_path and reference_path:
        a = _read_xy_csv(trace_path)
        b = _read_xy_csv(reference_path)
        if a.shape != b.shape:
            _fail(EXIT_PRECONDITION, f"trace length mismatch {a.shape} vs {b.shape}")
        click.echo(f"ATE: {average_tracking_error(a, b) * 1000:.3f} mm")
        click.echo(f"max error: {max_tracking_error(a, b) * 1000:.3f} mm")
        did_something = True
    if design_path and painted_path:
        if not scenario_path:
            _fail(EXIT_PRECONDITION, "raster comparison needs --scenario for canvas dimensions")
        sc = _load_scenario(scenario_path)
        doc = load_artwork(design_path)
        programs = compile_program(
            doc, stepover=sc.stepover, v_max=sc.v_max, a_max=sc.a_max,
            dt=sc.sim.timestep, start_position=sc.home - sc.canvas_origin,
        )
        design = sc.make_canvas()
        for prog in programs:
            render_program_design(prog, design, np.zeros(2))
        painted = sc.make_canvas()
        data = np.load(painted_path)
        for color in data.files:
            painted.coverage[color] = data[color]
        scores = coverage_agreement(design, painted)
        for color, score in sorted(scores.items()):
            click.echo(f"coverage agreement [{color}]: {score:.4f}")
        did_something = True
    if not did_something:
        _fail(EXIT_PRECONDITION, "nothing to evaluate: pass --trace/--reference or --design/--painted")


def _read_xy_csv(path) -> np.ndarray:
    rows = []
    with open(path) as f:
        reader = csv.DictReader(f)
        xname = "true_x" if "true_x" in reader.fieldnames else "x"
        yname = "true_y" if "true_y" in reader.fieldnames else "y"
        for row in reader:
            rows.append([float(row[xname]), float(row[yname])])
    return np.asarray(rows)


@main.command("serve")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--port", default=8765, show_default=True)
@click.option("--pace", default=1.0, show_default=True, help="wall pacing; 0 = free run")
@click.option("--expose-truth", is_flag=True, help="include true position in telemetry (sim only)")
@click.option("--capture-out", type=click.Path(), help="write captured points here on exit")
@click.option("--seed", default=None, type=int)
def cmd_serve(scenario_path, port, pace, expose_truth, capture_out, seed):
    """Serve the operator console (TCP on PORT, WebSocket on PORT+1)."""
    import asyncio

    from .server import ConsoleCore, ConsoleServer

    sc = _load_scenario(scenario_path)
    seed = sc.seed if seed is None else seed
    core = ConsoleCore(sc, np.random.default_rng(seed), expose_truth=expose_truth)
    server = ConsoleServer(core, port=port, pace=pace)
    click.echo(f"console: tcp://127.0.0.1:{port}  ws://127.0.0.1:{port + 1}")
    try:
        asyncio.run(server.run())
    except KeyboardInterrupt:
        pass
    finally:
        if capture_out and core.captured:
            core.export_captures(capture_out)
            click.echo(f"captured points -> {capture_out}")


def entry():
    try:
        main(standalone_mode=False)
    except click.exceptions.ClickException as e:
        e.show()
        sys.exit(EXIT_PRECONDITION)
    except click.exceptions.Abort:
        sys.exit(EXIT_PRECONDITION)
    except (PreconditionError,) as e:
        _fail(EXIT_PRECONDITION, str(e))
    except SessionAborted as e:
        _fail(EXIT_ABORTED, str(e))
    except NumericalError as e:
        _fail(EXIT_NUMERICAL, str(e))
    except MuralbotError as e:
        _fail(EXIT_NUMERICAL, str(e))


if __name__ == "__main__":
    entry()
