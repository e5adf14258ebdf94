import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from muralbot.artwork import (
    ArtworkDocument,
    Shape,
    compile_program,
    generate_infill,
    import_svg,
    load_artwork,
    load_program_csv,
    point_in_polygon,
    retime,
    save_artwork,
    save_program_csv,
    trapezoid_duration,
)
from muralbot.errors import PreconditionError

RECT = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.5], [0.0, 0.5]])


def fd_speed_accel(positions, dt):
    v = np.diff(positions, axis=0) / dt
    a = np.diff(positions, 2, axis=0) / dt**2
    return np.linalg.norm(v, axis=1), np.linalg.norm(a, axis=1)


class TestInfill:
    def test_rectangle_hatch_lines(self):
        res = generate_infill(RECT, 0.15, 0.0)
        assert not res.used_centerline_fallback
        ys = sorted({round(float(y), 9) for line in res.polylines for y in np.asarray(line)[:, 1]})
        assert ys == [0.075, 0.225, 0.375, 0.425]
        # serpentine: single chained polyline across all 4 lines
        assert len(res.polylines) == 1
        total = sum(
            np.sum(np.linalg.norm(np.diff(line, axis=0), axis=1)) for line in res.polylines
        )
        # 4 full-width passes + 3 connectors (0.15 + 0.15 + 0.05)
        assert total == pytest.approx(4 * 1.0 + 0.15 + 0.15 + 0.05, abs=1e-9)

    def test_zero_area_polygon_empty(self):
        degenerate = np.array([[0, 0], [1, 0], [2, 0]])
        assert generate_infill(degenerate, 0.15).polylines == []

    def test_thin_polygon_centerline_fallback(self):
        thin = np.array([[0, 0], [1, 0], [1, 0.08], [0, 0.08]])
        res = generate_infill(thin, 0.15)
        assert res.used_centerline_fallback
        assert len(res.polylines) == 1
        assert np.allclose(np.asarray(res.polylines[0])[:, 1], 0.04)

    def test_convex_polygon_points_inside(self):
        hexagon = np.array(
            [[0.5, 0.0], [1.5, 0.0], [2.0, 0.8], [1.5, 1.6], [0.5, 1.6], [0.0, 0.8]]
        )
        res = generate_infill(hexagon, 0.2, 0.3)
        assert res.polylines
        for line in res.polylines:
            for p in line:
                assert point_in_polygon(p, hexagon)

    def test_angled_hatch_direction(self):
        res = generate_infill(RECT, 0.2, np.pi / 2)  # vertical hatch
        for line in res.polylines:
            seg = np.asarray(line)
            d = np.abs(np.diff(seg, axis=0))
            # movement alternates between vertical passes and connectors
            assert d.sum() > 0

    def test_concave_polygon_splits_rows(self):
        # U-shape: middle scanlines produce two intervals
        u_shape = np.array(
            [[0, 0], [3, 0], [3, 2], [2, 2], [2, 0.8], [1, 0.8], [1, 2], [0, 2]]
        )
        res = generate_infill(u_shape, 0.4, 0.0)
        for line in res.polylines:
            seg = np.asarray(line)
            for i in range(len(seg) - 1):
                mid = (seg[i] + seg[i + 1]) / 2
                assert point_in_polygon(mid, u_shape)


class TestRetime:
    def test_trapezoid_closed_form(self):
        # 1 m at v=0.5, a=1.0: 0.5 s accel + 1.5 s cruise + 0.5 s decel
        assert trapezoid_duration(1.0, 0.5, 1.0) == pytest.approx(2.5)
        traj = retime(np.array([[0, 0], [1, 0]]), 0.5, 1.0, 0.001)
        assert traj.duration == pytest.approx(2.5, abs=0.001)
        assert np.allclose(traj.positions[-1], [1, 0], atol=1e-12)

    def test_triangle_closed_form(self):
        # L < v^2/a: peak speed sqrt(L a), duration 2 sqrt(L/a)
        assert trapezoid_duration(0.1, 0.5, 1.0) == pytest.approx(2 * np.sqrt(0.1))
        traj = retime(np.array([[0, 0], [0.1, 0]]), 0.5, 1.0, 0.001)
        assert traj.duration == pytest.approx(0.632, abs=0.002)
        speed, _ = fd_speed_accel(traj.positions, 0.001)
        assert speed.max() == pytest.approx(np.sqrt(0.1), abs=0.01)

    def test_limits_respected_with_corners(self):
        zigzag = np.array([[0, 0], [0.4, 0], [0.4, 0.3], [0.1, 0.3], [0.1, 0.05]])
        traj = retime(zigzag, 0.25, 0.5, 0.001)
        speed, accel = fd_speed_accel(traj.positions, 0.001)
        assert np.all(speed <= 0.25 + 1e-9)
        assert np.all(accel <= 0.5 + 1e-9)

    def test_collinear_points_keep_cruise(self):
        # straight path with redundant midpoints must not stop there
        line = np.array([[0, 0], [0.5, 0], [1.0, 0], [1.5, 0]])
        traj = retime(line, 0.5, 1.0, 0.001)
        assert traj.duration == pytest.approx(trapezoid_duration(1.5, 0.5, 1.0), abs=0.002)
        speed, _ = fd_speed_accel(traj.positions, 0.001)
        assert speed.max() == pytest.approx(0.5, abs=0.01)

    def test_single_point_rejected(self):
        with pytest.raises(PreconditionError):
            retime(np.array([[1.0, 1.0]]), 0.5, 1.0, 0.001)
        with pytest.raises(PreconditionError):
            retime(np.array([[1.0, 1.0], [1.0, 1.0]]), 0.5, 1.0, 0.001)

    def test_arc_length_preserved(self):
        zigzag = np.array([[0, 0], [0.4, 0], [0.4, 0.3], [0.1, 0.3]])
        traj = retime(zigzag, 0.25, 0.5, 0.001)
        in_len = np.sum(np.linalg.norm(np.diff(zigzag, axis=0), axis=1))
        out_len = np.sum(np.linalg.norm(np.diff(traj.positions, axis=0), axis=1))
        assert out_len == pytest.approx(in_len, abs=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(
        n=st.integers(2, 6),
        seed=st.integers(0, 10_000),
    )
    def test_feasibility_property(self, n, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(0, 1, (n, 2))
        try:
            traj = retime(pts, 0.25, 0.5, 0.001)
        except PreconditionError:
            return  # degenerate random path
        speed, accel = fd_speed_accel(traj.positions, 0.001)
        assert np.all(speed <= 0.25 + 1e-9)
        assert np.all(accel <= 0.5 + 1e-9)


def two_color_doc():
    return ArtworkDocument(
        canvas_width=2.0,
        canvas_height=1.0,
        palette=("black", "red"),
        shapes=(
            Shape("black", "polygon", [[0.1, 0.1], [0.9, 0.1], [0.9, 0.6], [0.1, 0.6]]),
            Shape("red", "polygon", [[1.1, 0.2], [1.8, 0.2], [1.8, 0.8], [1.1, 0.8]]),
            Shape("black", "polyline", [[0.2, 0.8], [0.8, 0.8]]),
        ),
    )


class TestCompileProgram:
    def test_one_program_per_color(self):
        programs = compile_program(two_color_doc(), stepover=0.15, dt=0.01)
        assert [p.color for p in programs] == ["black", "red"]

    def test_engaged_length_matches_infill(self):
        doc = ArtworkDocument(
            canvas_width=2.0, canvas_height=1.0, palette=("black",),
            shapes=(Shape("black", "polygon", [[0.1, 0.1], [1.1, 0.1], [1.1, 0.6], [0.1, 0.6]]),),
        )
        res = generate_infill(doc.shapes[0].points, 0.15, 0.0)
        expected = sum(np.sum(np.linalg.norm(np.diff(l, axis=0), axis=1)) for l in res.polylines)
        programs = compile_program(doc, stepover=0.15, dt=0.01)
        assert programs[0].painted_length == pytest.approx(expected, abs=1e-9)

    def test_empty_document(self):
        doc = ArtworkDocument(1.0, 1.0, ("black",), ())
        assert compile_program(doc) == []

    def test_unknown_color_rejected(self):
        with pytest.raises(PreconditionError, match="palette"):
            ArtworkDocument(
                1.0, 1.0, ("black",),
                (Shape("magenta", "polyline", [[0, 0], [1, 1]]),),
            )

    def test_determinism(self):
        a = compile_program(two_color_doc(), dt=0.01)
        b = compile_program(two_color_doc(), dt=0.01)
        for pa, pb in zip(a, b):
            assert len(pa.strokes) == len(pb.strokes)
            for sa, sb in zip(pa.strokes, pb.strokes):
                assert np.array_equal(sa.positions, sb.positions)
                assert np.array_equal(sa.times, sb.times)

    def test_timestamps_strictly_increasing(self):
        programs = compile_program(two_color_doc(), dt=0.01)
        for p in programs:
            all_times = np.concatenate([s.times for s in p.strokes])
            assert np.all(np.diff(all_times) > 0)

    def test_travel_moves_disengaged(self):
        programs = compile_program(two_color_doc(), dt=0.01)
        p = programs[0]
        kinds = [s.engaged for s in p.strokes]
        assert True in kinds and False in kinds


class TestArtworkIO:
    def test_yaml_roundtrip(self, tmp_path):
        doc = two_color_doc()
        path = tmp_path / "art.yaml"
        save_artwork(path, doc)
        loaded = load_artwork(path)
        assert loaded.palette == doc.palette
        assert len(loaded.shapes) == len(doc.shapes)
        assert np.allclose(loaded.shapes[0].points, doc.shapes[0].points)

    def test_program_csv_roundtrip(self, tmp_path):
        programs = compile_program(two_color_doc(), dt=0.01)
        path = tmp_path / "prog.csv"
        save_program_csv(path, programs[0])
        loaded = load_program_csv(path)
        assert loaded.color == programs[0].color
        assert len(loaded.strokes) == len(programs[0].strokes)
        assert loaded.painted_length == pytest.approx(programs[0].painted_length, abs=1e-6)

    def test_svg_import_rect_and_path(self, tmp_path):
        svg = """<svg xmlns="http://www.w3.org/2000/svg" width="2" height="1">
          <rect x="0.1" y="0.1" width="0.5" height="0.3" fill="black"/>
          <path d="M 1.0 0.5 L 1.5 0.5 L 1.5 0.9" stroke="red" fill="none"/>
        </svg>"""
        p = tmp_path / "art.svg"
        p.write_text(svg)
        doc = import_svg(p, palette=("black", "red"), color_map={"none": "red"})
        kinds = {(s.color, s.kind) for s in doc.shapes}
        assert ("black", "polygon") in kinds
        assert ("red", "polyline") in kinds
        # y flipped: rect at svg-y 0.1..0.4 -> canvas-y 0.6..0.9
        rect = [s for s in doc.shapes if s.kind == "polygon"][0]
        assert rect.points[:, 1].min() == pytest.approx(0.6)

    def test_svg_curves_rejected(self, tmp_path):
        svg = """<svg width="1" height="1"><path d="M 0 0 C 1 1 2 2 3 3" fill="black"/></svg>"""
        p = tmp_path / "curve.svg"
        p.write_text(svg)
        with pytest.raises(PreconditionError, match="flatten"):
            import_svg(p, palette=("black",))
