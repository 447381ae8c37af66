"""
Tests for the recalibration map, its inverse and calibrated intervals
"""

import numpy as np
import pytest

from src.bcgan.errors import CalibrationError
from src.bcgan.recalibration import (CalibrationMap, VoxelPosterior, apply_calibration, calibrated_interval,
                                     fit_calibration, invert_calibration, load_calibration_map, normal_cdf,
                                     normal_quantile, pit_values, recalibrated_median, save_calibration_map)


def _calibrated_sample(rng, size):
    mu = rng.uniform(50.0, 200.0, size=size)
    sigma = rng.uniform(1.0, 10.0, size=size)
    return VoxelPosterior(mu, sigma), rng.normal(mu, sigma)


class TestNormal:
    def test_cdf_values(self, rng):
        assert normal_cdf(0.0) == 0.5
        assert normal_cdf(1.96) == pytest.approx(0.9750021048517795, abs=1e-9)
        x = rng.normal(size=50) * 3
        np.testing.assert_allclose(normal_cdf(-x), 1.0 - normal_cdf(x), atol=1e-12)

    def test_quantile_values(self):
        assert normal_quantile(0.5) == 0.0
        assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-9)

    def test_quantile_round_trip(self):
        grid = np.linspace(0.01, 0.99, 99)
        np.testing.assert_allclose(normal_cdf(normal_quantile(grid)), grid, atol=1e-9)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, float("nan")])
    def test_quantile_domain(self, p):
        with pytest.raises(CalibrationError):
            normal_quantile(p)


class TestFit:
    def test_four_voxels(self):
        posterior = VoxelPosterior(np.zeros(4), np.ones(4))
        calibration_map = fit_calibration(posterior, [-10.0, -10.0, 10.0, 10.0], grid_size=100)
        assert apply_calibration(calibration_map, 0.5) == 0.5
        assert calibration_map.calibration_set_size == 4

    def test_truths_below_every_mean(self):
        posterior = VoxelPosterior(np.zeros(10), np.ones(10))
        calibration_map = fit_calibration(posterior, np.full(10, -5.0), grid_size=100)
        assert apply_calibration(calibration_map, 0.5) == 1.0

    def test_accepts_a_list_of_posteriors(self):
        posteriors = [VoxelPosterior(0.0, 1.0), VoxelPosterior(np.zeros(3), np.ones(3))]
        calibration_map = fit_calibration(posteriors, [-1.0, 1.0, 1.0, 1.0], grid_size=4)
        assert calibration_map.calibration_set_size == 4
        assert apply_calibration(calibration_map, 0.5) == 0.25

    def test_endpoints_pinned_and_monotone(self, rng):
        posterior, truths = _calibrated_sample(rng, 500)
        calibration_map = fit_calibration(posterior, truths * 1.05, grid_size=20)
        assert calibration_map.values[0] == 0.0 and calibration_map.values[-1] == 1.0
        assert np.all(np.diff(calibration_map.values) >= 0)

    def test_calibrated_data_gives_near_diagonal_map(self, rng):
        posterior, truths = _calibrated_sample(rng, 100_000)
        calibration_map = fit_calibration(posterior, truths, grid_size=100)
        assert np.max(np.abs(calibration_map.values - calibration_map.grid)) < 0.01

    def test_in_sample_curve_stays_near_diagonal(self, rng):
        size = 10_000
        posterior, truths = _calibrated_sample(rng, size)
        calibration_map = fit_calibration(posterior, truths, grid_size=100)
        pit = pit_values(posterior, truths)
        recalibrated = np.array([np.mean(apply_calibration(calibration_map, pit) <= p)
                                 for p in calibration_map.grid])
        assert np.max(np.abs(recalibrated - calibration_map.grid)) < 2.0 / np.sqrt(size)

    def test_zero_sigma_uses_floor(self):
        posterior = VoxelPosterior(np.array([5.0, 5.0]), np.zeros(2))
        np.testing.assert_array_equal(pit_values(posterior, [4.0, 6.0]), [0.0, 1.0])

    def test_indicator_forms_agree(self, rng):
        mu = rng.normal(size=100)
        sigma = rng.uniform(0.5, 2.0, size=100)
        y = rng.normal(size=100)
        p = rng.uniform(0.01, 0.99, size=100)
        quantile_form = y <= mu + sigma * normal_quantile(p)
        pit_form = normal_cdf((y - mu) / sigma) <= p
        np.testing.assert_array_equal(quantile_form, pit_form)

    def test_empty_set(self):
        with pytest.raises(CalibrationError, match="empty"):
            fit_calibration(VoxelPosterior(np.zeros(0), np.zeros(0)), [])

    def test_mismatched_lengths(self):
        with pytest.raises(CalibrationError):
            fit_calibration(VoxelPosterior(np.zeros(3), np.ones(3)), [0.0, 1.0])


class TestApplyAndInvert:
    def test_identity(self):
        identity = CalibrationMap.identity(10)
        for p in (0.0, 0.13, 0.5, 0.97, 1.0):
            assert apply_calibration(identity, p) == pytest.approx(p)

    def test_knots_and_midpoints(self):
        calibration_map = CalibrationMap([0.0, 0.3, 0.4, 1.0], [0.0, 0.2, 0.6, 1.0], 1)
        assert apply_calibration(calibration_map, 0.3) == 0.2
        assert apply_calibration(calibration_map, 0.4) == 0.6
        assert apply_calibration(calibration_map, 0.35) == pytest.approx(0.4)

    def test_inverse(self):
        calibration_map = CalibrationMap([0.0, 0.3, 0.4, 1.0], [0.0, 0.2, 0.6, 1.0], 1)
        assert invert_calibration(calibration_map, 0.4) == pytest.approx(0.35)
        assert invert_calibration(calibration_map, 0.0) == 0.0
        assert invert_calibration(calibration_map, 1.0) == 1.0

    def test_flat_segment_inverts_to_left_edge(self):
        calibration_map = CalibrationMap([0.0, 0.2, 0.6, 1.0], [0.0, 0.5, 0.5, 1.0], 1)
        assert invert_calibration(calibration_map, 0.5) == pytest.approx(0.2)

    def test_rejects_probabilities_outside_unit_interval(self):
        with pytest.raises(CalibrationError):
            apply_calibration(CalibrationMap.identity(), 1.5)

    @pytest.mark.parametrize("grid,values", [
        ([0.0, 0.5, 1.0], [0.0, 0.7, 0.6]),
        ([0.0, 0.5, 1.0], [0.1, 0.5, 1.0]),
        ([0.0, 0.5, 0.5, 1.0], [0.0, 0.2, 0.3, 1.0]),
    ])
    def test_invalid_maps(self, grid, values):
        with pytest.raises(CalibrationError):
            CalibrationMap(grid, values, 1)


class TestIntervals:
    def test_identity_map_gives_gaussian_interval(self):
        interval = calibrated_interval(VoxelPosterior(0.0, 1.0), CalibrationMap.identity(100), 0.95)
        assert interval.lo == pytest.approx(-1.959964, abs=1e-5)
        assert interval.hi == pytest.approx(1.959964, abs=1e-5)

    def test_vanishing_level_collapses_to_mean(self):
        interval = calibrated_interval(VoxelPosterior(3.0, 2.0), CalibrationMap.identity(100), 1e-9)
        assert interval.lo == pytest.approx(3.0, abs=1e-6)
        assert interval.hi == pytest.approx(3.0, abs=1e-6)

    def test_tail_compressing_map_widens_interval(self):
        posterior = VoxelPosterior(0.0, 1.0)
        steep_tails = CalibrationMap([0.0, 0.1, 0.9, 1.0], [0.0, 0.3, 0.7, 1.0], 1)
        plain = calibrated_interval(posterior, CalibrationMap.identity(100), 0.95)
        recalibrated = calibrated_interval(posterior, steep_tails, 0.95)
        assert recalibrated.hi - recalibrated.lo > plain.hi - plain.lo

    @pytest.mark.parametrize("level", [1e-12, 0.5, 0.95, 1 - 1e-12])
    def test_bounds_stay_finite_under_extreme_maps(self, level):
        posterior = VoxelPosterior(100.0, 5.0)
        # all observed mass below (step) or above (flat tail) the nominal median
        step = calibrated_interval(posterior, CalibrationMap([0.0, 0.5, 1.0], [0.0, 1.0, 1.0], 1), level)
        flat_tail = calibrated_interval(posterior, CalibrationMap([0.0, 0.5, 1.0], [0.0, 0.0, 1.0], 1), level)
        for interval in (step, flat_tail):
            assert np.isfinite(interval.lo) and np.isfinite(interval.hi)
            assert interval.lo <= interval.hi
        assert step.hi <= 100.0
        assert flat_tail.lo >= 100.0

    def test_vectorized(self):
        posterior = VoxelPosterior(np.array([0.0, 10.0]), np.array([1.0, 2.0]))
        interval = calibrated_interval(posterior, CalibrationMap.identity(100), 0.95)
        np.testing.assert_allclose(interval.hi - interval.lo, [2 * 1.959964, 4 * 1.959964], atol=1e-4)

    def test_level_domain(self):
        with pytest.raises(CalibrationError):
            calibrated_interval(VoxelPosterior(0.0, 1.0), CalibrationMap.identity(), 1.0)

    def test_recalibrated_median(self):
        posterior = VoxelPosterior(10.0, 2.0)
        assert recalibrated_median(posterior, CalibrationMap.identity(100)) == pytest.approx(10.0)
        shifted = CalibrationMap([0.0, 0.5, 1.0], [0.0, 0.8, 1.0], 1)
        assert recalibrated_median(posterior, shifted) == pytest.approx(10.0 + 2.0 * normal_quantile(0.3125))


class TestStorage:
    def test_round_trip(self, rng, tmp_path):
        posterior, truths = _calibrated_sample(rng, 300)
        calibration_map = fit_calibration(posterior, truths, grid_size=25)
        path = str(tmp_path / "calibration_map.csv")
        save_calibration_map(calibration_map, path)
        with open(path, "r", encoding="utf-8") as f:
            assert f.readline().strip() == "# calibration_map v1, T_cal=300"
            assert f.readline().strip() == "p,f"
        restored = load_calibration_map(path)
        np.testing.assert_array_equal(restored.grid, calibration_map.grid)
        np.testing.assert_array_equal(restored.values, calibration_map.values)
        assert restored.calibration_set_size == 300

    def test_missing_header(self, tmp_path):
        path = tmp_path / "map.csv"
        path.write_text("p,f\n0,0\n1,1\n")
        with pytest.raises(CalibrationError, match="header"):
            load_calibration_map(str(path))

    def test_wrong_columns(self, tmp_path):
        path = tmp_path / "map.csv"
        path.write_text("# calibration_map v1, T_cal=2\nx,y\n0,0\n1,1\n")
        with pytest.raises(CalibrationError, match="columns"):
            load_calibration_map(str(path))

    def test_non_monotone_file(self, tmp_path):
        path = tmp_path / "map.csv"
        path.write_text("# calibration_map v1, T_cal=2\np,f\n0,0\n0.5,0.9\n0.7,0.4\n1,1\n")
        with pytest.raises(CalibrationError):
            load_calibration_map(str(path))
