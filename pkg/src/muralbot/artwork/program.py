"""Artwork documents, per-color paint programs, and their file formats."""

from __future__ import annotations

import csv
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import configio
from ..errors import PreconditionError
from .infill import generate_infill, polygon_is_simple
from .retime import retime

Array = np.ndarray


@dataclass(frozen=True)
class Shape:
    color: str
    kind: str  # "polygon" | "polyline"
    points: Array

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        if self.kind not in ("polygon", "polyline"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError("points must be (m, 2)")


@dataclass(frozen=True)
class ArtworkDocument:
    canvas_width: float
    canvas_height: float
    palette: tuple[str, ...]
    shapes: tuple[Shape, ...]

    def __post_init__(self):
        for s in self.shapes:
            if s.color not in self.palette:
                raise PreconditionError(
                    f"shape color {s.color!r} not in palette {list(self.palette)}"
                )
            if np.any(s.points < -1e-9) or np.any(
                s.points > np.array([self.canvas_width, self.canvas_height]) + 1e-9
            ):
                raise PreconditionError(f"{s.kind} exceeds canvas bounds")
            if s.kind == "polygon":
                if len(s.points) < 3:
                    raise PreconditionError("polygon needs >= 3 points")
                if not polygon_is_simple(s.points):
                    raise PreconditionError("polygon is self-intersecting")

    def colors_used(self) -> list[str]:
        seen = []
        for s in self.shapes:
            if s.color not in seen:
                seen.append(s.color)
        return seen


@dataclass
class Stroke:
    """One timestamped polyline with the brush engaged or traveling."""

    engaged: bool
    times: Array  # absolute seconds within the program
    positions: Array  # (k, 2)

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.positions, axis=0), axis=1)))


@dataclass
class PaintProgram:
    color: str
    strokes: list[Stroke] = field(default_factory=list)

    @property
    def painted_length(self) -> float:
        return sum(s.length for s in self.strokes if s.engaged)

    @property
    def duration(self) -> float:
        return float(self.strokes[-1].times[-1]) if self.strokes else 0.0

    def validate(self, canvas_width: float, canvas_height: float) -> None:
        t_prev = -np.inf
        for s in self.strokes:
            if np.any(np.diff(s.times) <= 0):
                raise PreconditionError("stroke timestamps not strictly increasing")
            if s.times[0] <= t_prev:
                raise PreconditionError("strokes overlap in time")
            t_prev = float(s.times[-1])
            if s.engaged:
                hi = np.array([canvas_width, canvas_height]) + 1e-9
                if np.any(s.positions < -1e-9) or np.any(s.positions > hi):
                    raise PreconditionError("engaged stroke leaves the canvas")


def _order_strokes(polylines: list[Array], start: Array) -> list[Array]:
    """Greedy nearest-neighbor ordering, allowing stroke reversal."""
    remaining = [np.asarray(p) for p in polylines]
    ordered = []
    cursor = np.asarray(start, dtype=float)
    while remaining:
        best = None
        for idx, line in enumerate(remaining):
            for reverse in (False, True):
                head = line[-1] if reverse else line[0]
                d = float(np.linalg.norm(head - cursor))
                if best is None or d < best[0]:
                    best = (d, idx, reverse)
        _, idx, reverse = best
        line = remaining.pop(idx)
        if reverse:
            line = line[::-1]
        ordered.append(line)
        cursor = line[-1]
    return ordered


def compile_program(
    doc: ArtworkDocument,
    stepover: float = 0.15,
    v_max: float = 0.25,
    a_max: float = 0.5,
    dt: float = 0.001,
    infill_angle: float = 0.0,
    start_position: Array | None = None,
) -> list[PaintProgram]:
    """Compile a document into one program per color used.

    Within each color, polygon shapes are hatched at ``stepover`` and
    stroke order is chosen greedily on endpoints to cut travel; travel
    moves are inserted disengaged.  Each stroke and travel is retimed
    independently (strokes start and end at rest).
    """
    programs = []
    start = (
        np.array([doc.canvas_width / 2.0, 0.0]) if start_position is None
        else np.asarray(start_position, dtype=float)
    )
    for color in doc.colors_used():
        polylines: list[Array] = []
        for shape in doc.shapes:
            if shape.color != color:
                continue
            if shape.kind == "polygon":
                polylines.extend(generate_infill(shape.points, stepover, infill_angle).polylines)
            else:
                polylines.append(shape.points)
        polylines = [p for p in polylines if len(p) >= 2]
        program = PaintProgram(color=color)
        t_offset = 0.0
        cursor = start
        for line in _order_strokes(polylines, start):
            if np.linalg.norm(line[0] - cursor) > 1e-9:
                travel = retime(np.vstack([cursor, line[0]]), v_max, a_max, dt)
                program.strokes.append(
                    Stroke(False, travel.times + t_offset, travel.positions)
                )
                t_offset += travel.duration + dt
            timed = retime(line, v_max, a_max, dt)
            program.strokes.append(Stroke(True, timed.times + t_offset, timed.positions))
            t_offset += timed.duration + dt
            cursor = line[-1]
        program.validate(doc.canvas_width, doc.canvas_height)
        programs.append(program)
    return programs


# -- artwork file format ------------------------------------------------------

def load_artwork(path: str | Path) -> ArtworkDocument:
    doc = configio.read_tagged(path, "artwork")
    shapes = tuple(
        Shape(s["color"], s["kind"], np.array(s["points_m"], dtype=float))
        for s in doc["shapes"]
    )
    return ArtworkDocument(
        canvas_width=float(doc["canvas_width_m"]),
        canvas_height=float(doc["canvas_height_m"]),
        palette=tuple(doc["palette"]),
        shapes=shapes,
    )


def save_artwork(path: str | Path, doc: ArtworkDocument) -> None:
    configio.write_tagged(
        path,
        "artwork",
        {
            "canvas_width_m": doc.canvas_width,
            "canvas_height_m": doc.canvas_height,
            "palette": list(doc.palette),
            "shapes": [
                {"color": s.color, "kind": s.kind, "points_m": s.points.tolist()}
                for s in doc.shapes
            ],
        },
    )


# -- program CSV --------------------------------------------------------------

def save_program_csv(path: str | Path, program: PaintProgram) -> None:
    """Columns: t, x, y, engaged, color."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "x", "y", "engaged", "color"])
        for stroke in program.strokes:
            for t, (x, y) in zip(stroke.times, stroke.positions):
                w.writerow([f"{t:.6f}", f"{x:.9f}", f"{y:.9f}", int(stroke.engaged), program.color])


def load_program_csv(path: str | Path) -> PaintProgram:
    rows = []
    with open(path) as f:
        reader = csv.DictReader(f)
        for row in reader:
            rows.append(
                (float(row["t"]), float(row["x"]), float(row["y"]), bool(int(row["engaged"])), row["color"])
            )
    if not rows:
        raise PreconditionError(f"{path}: empty program")
    program = PaintProgram(color=rows[0][4])
    times, pos, engaged = [], [], rows[0][3]
    for t, x, y, eng, _color in rows:
        if eng != engaged and times:
            program.strokes.append(Stroke(engaged, np.array(times), np.array(pos)))
            times, pos = [], []
            engaged = eng
        times.append(t)
        pos.append((x, y))
    if times:
        program.strokes.append(Stroke(engaged, np.array(times), np.array(pos)))
    return program


# -- SVG import (move/line subset) --------------------------------------------

_PATH_TOKEN = re.compile(r"([MmLlHhVvZzCcQqAaSsTt])|(-?\d+\.?\d*(?:[eE][-+]?\d+)?)")


def _parse_path(d: str) -> list[Array]:
    """Parse an SVG path restricted to M/L/H/V/Z; curves must be
    pre-flattened upstream."""
    tokens = [m.group(0) for m in _PATH_TOKEN.finditer(d)]
    i = 0
    cur = np.zeros(2)
    start = np.zeros(2)
    lines: list[list] = []
    current: list = []

    def number() -> float:
        nonlocal i
        v = float(tokens[i])
        i += 1
        return v

    while i < len(tokens):
        cmd = tokens[i]
        i += 1
        if cmd in "Cc Qq Aa Ss Tt".split() or cmd in "CcQqAaSsTt":
            raise PreconditionError(
                f"SVG path command {cmd!r} unsupported: flatten curves to line segments first"
            )
        if cmd in "Mm":
            x, y = number(), number()
            cur = np.array([x, y]) if cmd == "M" else cur + [x, y]
            if current:
                lines.append(current)
            current = [cur.copy()]
            start = cur.copy()
            # subsequent pairs are implicit LineTos
            while i < len(tokens) and not tokens[i].isalpha():
                x, y = number(), number()
                cur = np.array([x, y]) if cmd == "M" else cur + [x, y]
                current.append(cur.copy())
        elif cmd in "Ll":
            while i < len(tokens) and not tokens[i].isalpha():
                x, y = number(), number()
                cur = np.array([x, y]) if cmd == "L" else cur + [x, y]
                current.append(cur.copy())
        elif cmd in "Hh":
            while i < len(tokens) and not tokens[i].isalpha():
                x = number()
                cur = np.array([x, cur[1]]) if cmd == "H" else cur + [x, 0]
                current.append(cur.copy())
        elif cmd in "Vv":
            while i < len(tokens) and not tokens[i].isalpha():
                y = number()
                cur = np.array([cur[0], y]) if cmd == "V" else cur + [0, y]
                current.append(cur.copy())
        elif cmd in "Zz":
            current.append(start.copy())
            cur = start.copy()
    if current:
        lines.append(current)
    return [np.asarray(line) for line in lines if len(line) >= 2]


def import_svg(
    path: str | Path,
    palette: tuple[str, ...],
    color_map: dict[str, str] | None = None,
    scale: float = 1.0,
) -> ArtworkDocument:
    """Import the move/line subset of an SVG as an artwork document.

    Fill/stroke attribute values are mapped to palette names through
    ``color_map`` (identity by default).  SVG y points down; the import
    flips it so the canvas origin sits at the lower left.
    """
    tree = ET.parse(str(path))
    root = tree.getroot()
    ns = {"svg": root.tag.split("}")[0].strip("{")} if "}" in root.tag else {}
    tag = (lambda t: f"svg:{t}") if ns else (lambda t: t)
    width = float(re.sub("[a-z%]+$", "", root.get("width", "1"))) * scale
    height = float(re.sub("[a-z%]+$", "", root.get("height", "1"))) * scale
    color_map = color_map or {}

    def to_palette(el) -> str:
        raw = el.get("fill") or el.get("stroke") or ""
        style = el.get("style", "")
        m = re.search(r"(?:fill|stroke)\s*:\s*([^;]+)", style)
        if not raw and m:
            raw = m.group(1).strip()
        name = color_map.get(raw, raw)
        if name not in palette:
            raise PreconditionError(f"SVG color {raw!r} not mapped into palette {list(palette)}")
        return name

    def transform(pts: Array) -> Array:
        out = pts * scale
        out[:, 1] = height - out[:, 1]
        return out

    shapes = []
    for el in root.iter():
        local = el.tag.split("}")[-1]
        if local == "path":
            for line in _parse_path(el.get("d", "")):
                closed = np.allclose(line[0], line[-1])
                pts = transform(line[:-1] if closed else line)
                shapes.append(Shape(to_palette(el), "polygon" if closed else "polyline", pts))
        elif local in ("polygon", "polyline"):
            nums = [float(v) for v in re.split(r"[ ,]+", el.get("points", "").strip()) if v]
            pts = transform(np.array(nums).reshape(-1, 2))
            shapes.append(Shape(to_palette(el), local, pts))
        elif local == "rect":
            x, y = float(el.get("x", 0)), float(el.get("y", 0))
            w, h = float(el.get("width")), float(el.get("height"))
            pts = transform(np.array([[x, y], [x + w, y], [x + w, y + h], [x, y + h]]))
            shapes.append(Shape(to_palette(el), "polygon", pts))
    return ArtworkDocument(width, height, tuple(palette), tuple(shapes))
