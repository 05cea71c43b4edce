import numpy as np
import pytest

from ctevo import se3, synth
from ctevo.camera import StereoCameraModel
from ctevo.errors import NoValidHypothesisError, SingularNormalMatrixError
from ctevo.ransac import (RansacParams, TrackletSegment, build_segments,
                          classify, fast_mc_ransac, fast_velocity_solve,
                          iterative_mc_ransac, velocity_jacobian)

CAM = StereoCameraModel(200.0, 200.0, 160.0, 120.0, 0.1, 320, 240)


def linearized_segment(p_early3, varpi, dt, tracklet_id=0):
    """Forward-simulate with the same linearization the fast solver uses."""
    p_early = np.append(p_early3, 1.0)
    p_late = (np.eye(4) + dt * se3.hat(varpi)) @ p_early
    return TrackletSegment(p_early, p_late, CAM.project(p_early),
                           CAM.project(p_late), dt, tracklet_id)


def exact_segment(p_early3, varpi, dt, tracklet_id=0):
    p_early = np.append(p_early3, 1.0)
    p_late = se3.exp(dt * varpi) @ p_early
    return TrackletSegment(p_early, p_late, CAM.project(p_early),
                           CAM.project(p_late), dt, tracklet_id)


def linearized_cost(segments, varpi):
    cost = 0.0
    for s in segments:
        d = s.p_late[:3] - s.p_early[:3]
        design = np.hstack([np.eye(3), -se3.skew(s.p_early[:3])])
        e = d - s.dt * design @ varpi
        cost += 0.5 * float(e @ e)
    return cost


GENERIC_POINTS = [np.array([0.3, -0.2, 2.0]), np.array([-0.5, 0.4, 3.0]),
                  np.array([0.1, 0.6, 1.5]), np.array([-0.2, -0.5, 4.0])]


class TestFastVelocitySolve:
    def test_zero_displacement(self):
        segments = [TrackletSegment(np.append(p, 1.0), np.append(p, 1.0),
                                    CAM.project(np.append(p, 1.0)),
                                    CAM.project(np.append(p, 1.0)), 0.02)
                    for p in GENERIC_POINTS]
        assert np.abs(fast_velocity_solve(segments)).max() < 1e-12

    def test_recovers_linearized_velocity(self):
        varpi = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        segments = [linearized_segment(p, varpi, 0.01) for p in GENERIC_POINTS[:3]]
        assert np.abs(fast_velocity_solve(segments) - varpi).max() < 1e-9

    def test_local_minimum_of_linearized_cost(self):
        rng = np.random.default_rng(0)
        varpi = rng.normal(size=6) * 0.3
        segments = [linearized_segment(p, varpi, 0.05) for p in GENERIC_POINTS]
        solution = fast_velocity_solve(segments)
        base = linearized_cost(segments, solution)
        for _ in range(100):
            delta = rng.normal(size=6)
            delta *= 1e-3 / np.linalg.norm(delta)
            assert base <= linearized_cost(segments, solution + delta) + 1e-15

    def test_normal_equation_residual_gradient(self):
        rng = np.random.default_rng(1)
        varpi = rng.normal(size=6) * 0.3
        segments = [linearized_segment(p + rng.normal(size=3) * 0.01, varpi, 0.05)
                    for p in GENERIC_POINTS]
        solution = fast_velocity_solve(segments)
        # gradient of the linearized cost at the solution
        grad = np.zeros(6)
        rhs_norm = 0.0
        for s in segments:
            design = s.dt * np.hstack([np.eye(3), -se3.skew(s.p_early[:3])])
            e = (s.p_late[:3] - s.p_early[:3]) - design @ solution
            grad -= design.T @ e
            rhs_norm += np.linalg.norm(design.T @ (s.p_late[:3] - s.p_early[:3]))
        assert np.linalg.norm(grad) < 1e-8 * (1.0 + rhs_norm)

    def test_single_segment_singular(self):
        with pytest.raises(SingularNormalMatrixError):
            fast_velocity_solve([exact_segment(GENERIC_POINTS[0],
                                               np.zeros(6), 0.01)])

    def test_matches_brute_force_small_sets(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            varpi = rng.normal(size=6) * 0.2
            n = rng.integers(3, 5)
            segments = []
            for _ in range(n):
                p = np.array([rng.uniform(-1, 1), rng.uniform(-0.8, 0.8),
                              rng.uniform(1.0, 4.0)])
                segments.append(linearized_segment(
                    p, varpi + rng.normal(size=6) * 0.05, rng.uniform(0.01, 0.1)))
            fast = fast_velocity_solve(segments)
            brute = synth.brute_force_velocity(segments)
            assert np.abs(fast - brute).max() < 1e-10


class TestClassify:
    def test_consistent_segment_is_inlier(self):
        varpi = np.array([0.2, -0.1, 0.05, 0.01, 0.02, -0.03])
        segments = [exact_segment(p, varpi, 0.2) for p in GENERIC_POINTS]
        inliers, outliers = classify(segments, varpi, CAM, 0.05)
        assert outliers.size == 0

    def test_relative_error_half_is_outlier(self):
        # direct evaluation of the relative test: reprojection 10 px off
        # while the tracklet moved 20 px -> e_rel = 0.5
        from ctevo.ransac import _relative_errors, _segment_arrays
        p_early = np.append(GENERIC_POINTS[0], 1.0)
        y_pred = CAM.project(p_early)  # prediction under zero velocity
        y_late = y_pred + np.array([10.0, 0.0, 0.0])
        y_early = y_late - np.array([0.0, 20.0, 0.0])
        segment = TrackletSegment(p_early, CAM.triangulate(y_late), y_early,
                                  y_late, 0.1)
        score, _, _ = _relative_errors(_segment_arrays([segment]),
                                       np.zeros(6), CAM)
        assert score[0] == pytest.approx(0.5)
        inliers, outliers = classify([segment], np.zeros(6), CAM, 0.05)
        assert inliers.size == 0 and outliers.size == 1

    def test_zero_velocity_static_segment_inlier(self):
        p = np.append(GENERIC_POINTS[1], 1.0)
        y = CAM.project(p)
        segment = TrackletSegment(p, p, y, y, 0.05)
        inliers, _ = classify([segment], np.zeros(6), CAM, 1e-9)
        assert inliers.size == 1

    def test_partition_is_exhaustive_and_disjoint(self):
        rng = np.random.default_rng(3)
        varpi = rng.normal(size=6) * 0.2
        segments = [exact_segment(p, varpi, 0.1) for p in GENERIC_POINTS]
        segments += [exact_segment(p + 0.5, varpi * 3.0, 0.1)
                     for p in GENERIC_POINTS[:2]]
        inliers, outliers = classify(segments, varpi, CAM, 0.05)
        combined = sorted(np.concatenate([inliers, outliers]).tolist())
        assert combined == list(range(len(segments)))
        assert set(inliers.tolist()).isdisjoint(outliers.tolist())


def scene_segments(seed, n_landmarks=100, noise=0.0, outlier_fraction=0.0,
                   speed=2.5):
    """100 single-segment tracklets with labels; all landmarks stay in view."""
    varpi_world = speed * np.array([0.3, -0.12, 0.15, 0.04, 0.06, -0.08])
    scene = synth.generate_constant_velocity_scene(
        varpi_world, 0.6, n_landmarks, CAM, seed=seed, noise_px=noise,
        outlier_fraction=outlier_fraction, depth_range=(1.0, 3.0),
        margin=25.0, sample_times=np.linspace(0.0, 0.6, 13), min_visible=13)
    rendered = synth.render_tracklets(scene, n_clusters=2, cluster_span=0.3)
    segments = build_segments(rendered.tracklets, CAM)
    labels = np.array([rendered.outlier_labels[s.tracklet_id]
                       for s in segments])
    return scene, segments, labels


class TestFastMcRansac:
    def test_all_consistent_segments_all_inliers(self):
        scene, segments, _ = scene_segments(seed=4)
        result = fast_mc_ransac(segments, CAM, iterations=50, seed=0)
        assert result.inliers.size == len(segments)
        assert result.iterations_used == 50

    def test_determinism(self):
        _, segments, _ = scene_segments(seed=5, noise=0.3, outlier_fraction=0.2)
        a = fast_mc_ransac(segments, CAM, iterations=300, threshold=0.1, seed=7)
        b = fast_mc_ransac(segments, CAM, iterations=300, threshold=0.1, seed=7)
        assert np.array_equal(a.velocity, b.velocity)
        assert np.array_equal(a.inliers, b.inliers)
        assert np.array_equal(a.outliers, b.outliers)

    def test_robustness_with_labeled_outliers(self):
        _, segments, labels = scene_segments(seed=6, noise=0.5,
                                             outlier_fraction=0.3)
        assert len(segments) == 100 and labels.sum() == 30
        result = fast_mc_ransac(segments, CAM, iterations=2000,
                                threshold=0.2, seed=0)
        found = np.zeros(len(segments), dtype=bool)
        found[result.inliers] = True
        true_inliers = ~labels
        precision = (found & true_inliers).sum() / max(found.sum(), 1)
        recall = (found & true_inliers).sum() / true_inliers.sum()
        assert precision == 1.0
        assert recall >= 0.95

    def test_too_few_segments(self):
        _, segments, _ = scene_segments(seed=7)
        with pytest.raises(NoValidHypothesisError):
            fast_mc_ransac(segments[:2], CAM, iterations=10, sample_size=3)


class TestVelocityJacobian:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(8)
        eps = 1e-6
        for _ in range(100):
            p = np.append([rng.uniform(-1, 1), rng.uniform(-0.8, 0.8),
                           rng.uniform(1.0, 4.0)], 1.0)
            dt = rng.uniform(0.02, 0.4)
            varpi = rng.normal(size=6) * 0.5
            analytic = velocity_jacobian(p, dt, varpi, CAM)
            fd = np.zeros((3, 6))
            for c in range(6):
                d = np.zeros(6)
                d[c] = eps
                yp = CAM.project(se3.exp(dt * (varpi + d)) @ p)
                ym = CAM.project(se3.exp(dt * (varpi - d)) @ p)
                fd[:, c] = (yp - ym) / (2 * eps)
            assert np.abs(fd - analytic).max() < \
                1e-5 * max(1.0, np.abs(analytic).max())


class TestIterativeMcRansac:
    def test_exact_recovery_from_fast_init(self):
        varpi = np.array([0.15, -0.08, 0.1, 0.03, 0.05, -0.04])
        rng = np.random.default_rng(9)
        segments = []
        for _ in range(30):
            p = np.array([rng.uniform(-1, 1), rng.uniform(-0.8, 0.8),
                          rng.uniform(1.0, 4.0)])
            segments.append(exact_segment(p, varpi, rng.uniform(0.05, 0.3)))
        init = fast_velocity_solve(segments)
        result = iterative_mc_ransac(segments, init, CAM)
        assert result.converged
        assert np.abs(result.velocity - varpi).max() < 1e-8
        assert result.inliers.size == len(segments)

    def test_stationary_at_true_velocity(self):
        varpi = np.array([0.15, -0.08, 0.1, 0.03, 0.05, -0.04])
        rng = np.random.default_rng(10)
        segments = [exact_segment(np.array([rng.uniform(-1, 1),
                                            rng.uniform(-0.8, 0.8),
                                            rng.uniform(1.0, 4.0)]),
                                  varpi, 0.2) for _ in range(10)]
        result = iterative_mc_ransac(segments, varpi, CAM)
        assert np.abs(result.velocity - varpi).max() < 1e-12

    def test_cost_non_increasing(self):
        _, segments, _ = scene_segments(seed=11, noise=1.0)
        init = fast_mc_ransac(segments, CAM, iterations=200, threshold=0.3,
                              seed=0)
        from ctevo.ransac import _segment_arrays, _weighted_cost
        arrays = _segment_arrays(segments)
        r_inv = np.diag([0.5, 0.5, 0.1])
        subset = init.inliers
        costs = [ _weighted_cost(arrays, init.velocity, CAM, r_inv, subset) ]
        result = iterative_mc_ransac(segments, init.velocity, CAM,
                                     threshold=0.3, refine_indices=subset)
        costs.append(_weighted_cost(arrays, result.velocity, CAM, r_inv, subset))
        assert costs[-1] <= costs[0] + 1e-12

    def test_all_inliers_at_any_threshold_on_noiseless_data(self):
        varpi = np.array([0.2, 0.1, -0.05, -0.02, 0.04, 0.06])
        rng = np.random.default_rng(12)
        segments = [exact_segment(np.array([rng.uniform(-1, 1),
                                            rng.uniform(-0.8, 0.8),
                                            rng.uniform(1.5, 4.0)]),
                                  varpi, rng.uniform(0.05, 0.25))
                    for _ in range(40)]
        init = fast_velocity_solve(segments)
        for threshold in (1e-4, 1e-3, 0.05):
            result = iterative_mc_ransac(segments, init, CAM,
                                         threshold=threshold)
            assert result.inliers.size == len(segments)
