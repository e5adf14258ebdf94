import numpy as np
import pytest

from muralbot.calibration import (
    CalibrationDataset,
    build_piecewise_map,
    fit_homography,
    generate_grid_excitation,
    load_dataset_csv,
    load_homography_map,
    save_dataset_csv,
    save_homography_map,
    solve_joint,
    solve_proprioceptive,
    synth_drag_path,
    warp_trajectory,
)
from muralbot.calibration.homography import apply_homography
from muralbot.errors import (
    DegenerateConfigurationError,
    OutOfMapError,
    PreconditionError,
    UnderdeterminedError,
)
from muralbot.geometry import GroundTruthWinch, WinchModel, default_geometry


@pytest.fixture
def geom():
    return default_geometry(3.0, 2.4, 0.15, 0.10)


def quad_distance_model(geom, start):
    """A ground-truth *quadratic* winch in distance convention."""
    from muralbot.geometry import cable_geometry

    d0 = cable_geometry(geom, start).distances
    coeffs = np.stack([d0, np.full(4, 0.007), np.full(4, 2.5e-6)], axis=1)
    return WinchModel(coeffs, convention="distance")


def synth_quadratic_dataset(geom, model, positions, rng=None, noise=0.0):
    from muralbot.geometry import cable_geometry

    theta = np.empty((len(positions), 4))
    for k, x in enumerate(positions):
        d = cable_geometry(geom, x).distances
        for i in range(4):
            theta[k, i] = model.angle_for_length(d[i], i)
    if noise > 0 and rng is not None:
        theta = theta + rng.normal(0, noise, theta.shape)
    t = np.arange(len(positions)) * 0.05
    return CalibrationDataset(theta, t, provenance="grid-stage-2")


def synth_layered_dataset(geom, winches, positions):
    """Angles through layered true winches at given true positions."""
    from muralbot.geometry import cable_geometry

    theta = np.empty((len(positions), 4))
    for k, x in enumerate(positions):
        eff = cable_geometry(geom, x).effective_lengths
        for i in range(4):
            theta[k, i] = winches[i].angle_for_length(eff[i])
    t = np.arange(len(positions)) * 0.05
    return CalibrationDataset(theta, t)


def nominal_init(geom, start, radius=0.007):
    from muralbot.geometry import cable_geometry

    d0 = cable_geometry(geom, start).distances
    coeffs = np.stack([d0, np.full(4, radius), np.zeros(4)], axis=1)
    return WinchModel(coeffs, convention="distance")


def workspace_positions(geom, n, rng, margin=0.3):
    lo = np.array([margin, margin])
    hi = np.array([geom.frame_width - margin, geom.frame_height - margin])
    return rng.uniform(lo, hi, (n, 2))


class TestProprioceptive:
    def test_noiseless_roundtrip_recovers_parameters(self, geom):
        rng = np.random.default_rng(0)
        start = np.array([1.5, 0.5])
        truth = quad_distance_model(geom, start)
        positions = workspace_positions(geom, 200, rng)
        data = synth_quadratic_dataset(geom, truth, positions)
        init = nominal_init(geom, start + rng.normal(0, 0.02, 2), radius=0.0065)
        result = solve_proprioceptive(data, geom, init)
        assert np.allclose(result.model.coeffs, truth.coeffs, rtol=1e-6, atol=1e-9)
        assert np.allclose(result.positions, positions, atol=1e-6)
        assert result.residual_rms < 1e-9

    def test_layered_truth_quadratic_fit_residual(self, geom):
        rng = np.random.default_rng(1)
        start = np.array([1.5, 0.5])
        from muralbot.geometry import cable_geometry

        eff0 = cable_geometry(geom, start).effective_lengths
        winches = [
            GroundTruthWinch(0.02, 0.0006, 20, zero_offset=eff0[i]) for i in range(4)
        ]
        positions = workspace_positions(geom, 300, rng)
        data = synth_layered_dataset(geom, winches, positions)
        init = nominal_init(geom, start, radius=0.01 / 1.0)
        # distance-convention init: nominal radius over the routing ratio
        coeffs = init.coeffs.copy()
        coeffs[:, 1] = 0.01 / geom.routing_ratio
        init = WinchModel(coeffs, convention="distance")
        result = solve_proprioceptive(data, geom, init)
        assert result.residual_rms < 2e-3  # under 2 mm over a 3 x 2.4 m workspace

    def test_stage2_refines_stage1(self, geom):
        # common evaluation: position prediction error against truth on a
        # held-out grid, after calibrating on each stage's data
        rng = np.random.default_rng(2)
        start = np.array([1.5, 0.5])
        truth = quad_distance_model(geom, start)

        # stage 1: operator drag in the reachable lower band, noisy angles
        drag = synth_drag_path([0.3, 0.3], [2.7, 1.2], 120.0, 20.0, rng)
        data1 = synth_quadratic_dataset(geom, truth, drag, rng, noise=2e-3)
        init = nominal_init(geom, start + rng.normal(0, 0.01, 2), radius=0.0068)
        stage1 = solve_proprioceptive(data1, geom, init)

        # stage 2: grid sweep across the full workspace with stage-1 params
        grid = generate_grid_excitation([0.3, 0.3], [2.7, 2.1], 0.6, dt=0.01)
        samples = grid.trajectory.positions[:: max(len(grid.trajectory.positions) // 400, 1)]
        data2 = synth_quadratic_dataset(geom, truth, samples, rng, noise=2e-3)
        stage2 = solve_proprioceptive(data2, geom, stage1.model)

        eval_pts = workspace_positions(geom, 60, rng)
        eval_data = synth_quadratic_dataset(geom, truth, eval_pts)

        def eval_error(model):
            from muralbot.calibration.winch import batch_positions_from_lengths, _predict

            pred = _predict(eval_data.theta, model.coeffs)
            rec = batch_positions_from_lengths(geom, pred)
            return float(np.mean(np.linalg.norm(rec - eval_pts, axis=1)))

        e1, e2 = eval_error(stage1.model), eval_error(stage2.model)
        assert e2 <= e1

    def test_underdetermined_excitation_raises(self, geom):
        start = np.array([1.5, 1.2])
        truth = quad_distance_model(geom, start)
        positions = np.tile(start, (60, 1))  # no excitation at all
        data = synth_quadratic_dataset(geom, truth, positions)
        with pytest.raises(UnderdeterminedError, match="cable"):
            solve_proprioceptive(data, geom, nominal_init(geom, start))

    def test_too_few_samples_rejected(self, geom):
        with pytest.raises(PreconditionError, match="50"):
            CalibrationDataset(np.zeros((10, 4)), np.arange(10.0))

    def test_gradient_norm_at_optimum(self, geom):
        # finite-difference oracle: cost gradient wrt p at the solution
        rng = np.random.default_rng(3)
        start = np.array([1.5, 0.5])
        truth = quad_distance_model(geom, start)
        positions = workspace_positions(geom, 120, rng)
        data = synth_quadratic_dataset(geom, truth, positions, rng, noise=1e-3)
        result = solve_proprioceptive(data, geom, nominal_init(geom, start))

        from muralbot.calibration.winch import batch_positions_from_lengths, _predict
        from muralbot.geometry import cable_geometry

        def cost(coeffs):
            # profile out x: re-solve positions for these coefficients
            pred = _predict(data.theta, coeffs)
            xs = batch_positions_from_lengths(geom, pred, x0=result.positions.copy())
            total = 0.0
            for k in range(data.n):
                d = cable_geometry(geom, xs[k]).distances
                total += float(np.sum((pred[k] - d) ** 2))
            return total / (4 * data.n)

        c0 = cost(result.model.coeffs)
        g_max = 0.0
        for i in range(4):
            for j in range(3):
                eps = (1e-7, 1e-9, 1e-11)[j]
                cp = result.model.coeffs.copy(); cp[i, j] += eps
                cm = result.model.coeffs.copy(); cm[i, j] -= eps
                g = (cost(cp) - cost(cm)) / (2 * eps)
                scale = (1.0, 1e2, 1e4)[j]  # parameter scale per power of theta
                g_max = max(g_max, abs(g) / scale)
        assert g_max < 1e-8


class TestJoint:
    def test_zero_extero_weight_matches_proprioceptive(self, geom):
        rng = np.random.default_rng(4)
        start = np.array([1.5, 0.5])
        truth = quad_distance_model(geom, start)
        positions = workspace_positions(geom, 100, rng)
        data = synth_quadratic_dataset(geom, truth, positions)
        data = data.with_labels([0, 10, 20, 30], positions[[0, 10, 20, 30]] + 0.05)
        init = nominal_init(geom, start)
        a = solve_proprioceptive(data, geom, init)
        b = solve_joint(data, geom, init, w_proprio=1.0, w_extero=0.0)
        assert np.allclose(a.model.coeffs, b.model.coeffs, atol=1e-12)

    def test_consistent_labels_leave_result_unchanged(self, geom):
        rng = np.random.default_rng(5)
        start = np.array([1.5, 0.5])
        truth = quad_distance_model(geom, start)
        positions = workspace_positions(geom, 100, rng)
        data = synth_quadratic_dataset(geom, truth, positions)
        init = nominal_init(geom, start)
        base = solve_proprioceptive(data, geom, init)
        idx = [5, 25, 50, 75]
        labeled = data.with_labels(idx, base.positions[idx])
        joint = solve_joint(labeled, geom, init)
        assert np.allclose(joint.model.coeffs, base.model.coeffs, rtol=1e-6, atol=1e-9)

    def test_needs_four_labels(self, geom):
        start = np.array([1.5, 0.5])
        truth = quad_distance_model(geom, start)
        rng = np.random.default_rng(6)
        positions = workspace_positions(geom, 80, rng)
        data = synth_quadratic_dataset(geom, truth, positions)
        data = data.with_labels([0, 1], positions[[0, 1]])
        from muralbot.errors import CalibrationError

        with pytest.raises(CalibrationError, match="4 labeled"):
            solve_joint(data, geom, nominal_init(geom, start))


UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


class TestHomography:
    def test_identity(self):
        H = fit_homography(UNIT_SQUARE, UNIT_SQUARE)
        assert np.allclose(H, np.eye(3), atol=1e-12)

    def test_pure_translation(self):
        H = fit_homography(UNIT_SQUARE, UNIT_SQUARE + [0.1, 0.0])
        expected = np.eye(3)
        expected[0, 2] = 0.1
        assert np.allclose(H, expected, atol=1e-12)

    def test_random_recovery(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            H_true = np.eye(3) + rng.normal(0, 0.1, (3, 3))
            H_true /= H_true[2, 2]
            measured = apply_homography(H_true, UNIT_SQUARE)
            H = fit_homography(UNIT_SQUARE, measured)
            assert np.allclose(H, H_true, rtol=1e-10, atol=1e-12)

    def test_corner_exactness(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            measured = UNIT_SQUARE + rng.normal(0, 0.05, (4, 2))
            H = fit_homography(UNIT_SQUARE, measured)
            back = apply_homography(H, UNIT_SQUARE)
            assert np.allclose(back, measured, atol=1e-12)

    def test_collinear_rejected(self):
        bad = np.array([[0, 0], [0.5, 0.0], [1.0, 0.0], [0, 1]])
        with pytest.raises(DegenerateConfigurationError):
            fit_homography(bad, UNIT_SQUARE)


def grid_points(xs, ys):
    T = np.zeros((len(ys), len(xs), 2))
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            T[i, j] = (x, y)
    return T


class TestPiecewiseMap:
    def test_2x2_grid_single_section(self):
        T = grid_points([0.0, 2.0], [0.0, 1.5])
        hmap = build_piecewise_map(T, T + 0.01)
        assert hmap.n_sections == 1

    def test_3x3_grid_four_sections(self):
        T = grid_points([0.0, 1.0, 2.0], [0.0, 0.75, 1.5])
        hmap = build_piecewise_map(T, T * 1.01)
        assert hmap.n_sections == 4

    def test_missing_point_listed(self):
        T = grid_points([0.0, 1.0], [0.0, 1.0])
        M = T.copy()
        M[1, 0] = np.nan
        with pytest.raises(PreconditionError, match=r"\(1, 0\)"):
            build_piecewise_map(T, M)

    def test_grid_points_map_exactly(self):
        rng = np.random.default_rng(9)
        T = grid_points([0.0, 1.0, 2.0], [0.0, 0.75, 1.5])
        M = T + rng.normal(0, 0.01, T.shape)
        hmap = build_piecewise_map(T, M)
        for i in range(3):
            for j in range(3):
                assert np.allclose(hmap.warp(T[i, j]), M[i, j], atol=1e-9)

    def test_shared_edge_continuity(self):
        # measured data generated by one global projective distortion:
        # per-cell DLT recovers it exactly, so adjacent sections must
        # agree along shared edges to numerical precision
        rng = np.random.default_rng(10)
        H_true = np.eye(3) + rng.normal(0, 0.05, (3, 3))
        H_true /= H_true[2, 2]
        T = grid_points([0.0, 1.0, 2.0], [0.0, 0.75, 1.5])
        M = np.zeros_like(T)
        for i in range(3):
            for j in range(3):
                M[i, j] = apply_homography(H_true, T[i, j])
        hmap = build_piecewise_map(T, M)
        for y in rng.uniform(0.0, 1.5, 500):  # vertical shared edge x=1
            a = apply_homography(hmap.H[0 if y <= 0.75 else 1, 0], [1.0, y])
            b = apply_homography(hmap.H[0 if y <= 0.75 else 1, 1], [1.0, y])
            assert np.linalg.norm(a - b) < 1e-9
        for x in rng.uniform(0.0, 2.0, 500):  # horizontal shared edge y=0.75
            a = apply_homography(hmap.H[0, 0 if x <= 1 else 1], [x, 0.75])
            b = apply_homography(hmap.H[1, 0 if x <= 1 else 1], [x, 0.75])
            assert np.linalg.norm(a - b) < 1e-9

    def test_boundary_ties_to_lower_left(self):
        T = grid_points([0.0, 1.0, 2.0], [0.0, 0.75, 1.5])
        hmap = build_piecewise_map(T, T.copy())
        assert hmap.section_of([1.0, 0.3]) == (0, 0)
        assert hmap.section_of([0.5, 0.75]) == (0, 0)
        assert hmap.section_of([1.5, 1.0]) == (1, 1)


class TestWarp:
    def test_identity_map_unchanged(self):
        T = grid_points([0.0, 1.0, 2.0], [0.0, 0.75, 1.5])
        hmap = build_piecewise_map(T, T.copy())
        traj = np.array([[0.3, 0.2], [1.5, 1.2], [1.99, 0.01]])
        assert np.allclose(warp_trajectory(hmap, traj), traj, atol=1e-10)

    def test_translation_map_shifts(self):
        T = grid_points([0.0, 1.0, 2.0], [0.0, 0.75, 1.5])
        hmap = build_piecewise_map(T, T + [0.02, -0.01])
        traj = np.array([[0.3, 0.2], [1.5, 1.2]])
        assert np.allclose(warp_trajectory(hmap, traj), traj + [0.02, -0.01], atol=1e-10)

    def test_out_of_map_raises(self):
        T = grid_points([0.0, 1.0], [0.0, 1.0])
        hmap = build_piecewise_map(T, T.copy())
        with pytest.raises(OutOfMapError):
            hmap.warp([1.5, 0.5])
        # within the 1 mm epsilon: clamps to the nearest section
        assert np.allclose(hmap.warp([1.0005, 0.5]), [1.0005, 0.5], atol=1e-9)

    def test_warp_invertibility(self):
        rng = np.random.default_rng(11)
        T = grid_points([0.0, 1.0, 2.0], [0.0, 0.75, 1.5])
        M = T + rng.normal(0, 0.01, T.shape)
        hmap = build_piecewise_map(T, M)
        pts = rng.uniform([0.05, 0.05], [1.95, 1.45], (50, 2))
        for p in pts:
            w = hmap.warp(p)
            row, col = hmap.section_of(p)
            back = apply_homography(np.linalg.inv(hmap.H[row, col]), w)
            assert np.linalg.norm(back - p) < 1e-9

    def test_map_serialization_roundtrip(self, tmp_path):
        rng = np.random.default_rng(12)
        T = grid_points([0.0, 1.0, 2.0], [0.0, 0.75, 1.5])
        M = T + rng.normal(0, 0.01, T.shape)
        hmap = build_piecewise_map(T, M)
        path = tmp_path / "map.yaml"
        save_homography_map(path, hmap)
        loaded = load_homography_map(path)
        assert np.allclose(loaded.H, hmap.H, atol=1e-12)


class TestExcitation:
    def test_grid_counts_and_serpentine(self):
        grid = generate_grid_excitation([0, 0], [2, 2], 0.5, dt=0.01)
        assert len(grid.vertices) == 25
        # serpentine: row y-values grouped, x alternates direction
        first_row = grid.vertices[:5]
        second_row = grid.vertices[5:10]
        assert np.all(np.diff(first_row[:, 0]) > 0)
        assert np.all(np.diff(second_row[:, 0]) < 0)

    def test_spacing_equal_to_size_four_corners(self):
        grid = generate_grid_excitation([0, 0], [2, 2], 2.0, dt=0.01)
        assert len(grid.vertices) == 4

    def test_degenerate_workspace_rejected(self):
        with pytest.raises(PreconditionError):
            generate_grid_excitation([0, 0], [0, 2], 0.5)
        with pytest.raises(PreconditionError):
            generate_grid_excitation([0, 0], [2, 2], 3.0)

    def test_drag_path_stays_inside(self):
        rng = np.random.default_rng(13)
        path = synth_drag_path([0.3, 0.3], [2.7, 1.5], 60.0, 20.0, rng)
        assert path.shape == (1200, 2)
        assert np.all(path >= [0.3, 0.3]) and np.all(path <= [2.7, 1.5])


class TestDatasetCsv:
    def test_roundtrip_with_labels(self, tmp_path):
        rng = np.random.default_rng(14)
        theta = rng.normal(10, 3, (60, 4))
        data = CalibrationDataset(theta, np.arange(60) * 0.05)
        data = data.with_labels([3, 7], [[1.0, 2.0], [3.0, 4.0]])
        path = tmp_path / "cal.csv"
        save_dataset_csv(path, data)
        loaded = load_dataset_csv(path)
        assert np.allclose(loaded.theta, data.theta, atol=1e-9)
        assert loaded.labeled_mask().sum() == 2
        assert np.allclose(loaded.labels[3], [1.0, 2.0])
