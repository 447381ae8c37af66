"""
Tests for metrics, curves, the paired t-test and report assembly
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import gammaln

from src.bcgan.errors import MetricError
from src.bcgan.evaluation import (CurveSeries, boxplot_stats, build_metric_report,
                                  calibration_curve, compare_reports, interval_coverage, nrmse, nstd,
                                  paired_ttest, pearson_r, rmse, rms_vs_diagonal, slice_level,
                                  sparsification_curve, volume_level)
from src.bcgan.recalibration import CalibrationMap, VoxelPosterior, fit_calibration
from tests.factories import make_subject


def _student_two_sided(t: float, df: int) -> float:
    log_norm = gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * math.log(df * math.pi)

    def density(x):
        return math.exp(log_norm - (df + 1) / 2 * math.log1p(x * x / df))

    tail, _ = quad(density, abs(t), np.inf, epsabs=1e-13, epsrel=1e-12)
    return 2.0 * tail


class TestScalarMetrics:
    def test_rmse(self):
        mask = np.ones(2, dtype=bool)
        assert rmse(np.array([1.0, 2.0]), np.array([1.0, 2.0]), mask) == 0.0
        assert rmse(np.array([3.0, 4.0]), np.zeros(2), mask) == pytest.approx(3.535534, abs=1e-6)
        assert rmse(np.array([13.0, 14.0]), np.full(2, 10.0), mask) == pytest.approx(3.535534, abs=1e-6)

    def test_rmse_ignores_voxels_outside_mask(self):
        mask = np.array([True, False])
        assert rmse(np.array([1.0, 100.0]), np.array([1.0, 0.0]), mask) == 0.0

    def test_empty_mask(self):
        with pytest.raises(MetricError, match="empty"):
            rmse(np.ones(3), np.ones(3), np.zeros(3, dtype=bool))

    def test_nrmse(self):
        mask = np.ones(2, dtype=bool)
        truth = np.array([3.0, 4.0])
        assert nrmse(truth, truth, mask) == 0.0
        assert nrmse(np.zeros(2), truth, mask) == 1.0

    def test_nrmse_zero_truth(self):
        with pytest.raises(MetricError):
            nrmse(np.ones(2), np.zeros(2), np.ones(2, dtype=bool))

    def test_nstd(self):
        mask = np.ones(2, dtype=bool)
        assert nstd(np.full(2, 0.7), mask) == pytest.approx(0.7)
        assert nstd(np.array([0.0, 2.0]), mask) == pytest.approx(math.sqrt(2))
        assert nstd(np.array([0.0, 2.0]) * 255, mask) == pytest.approx(255 * math.sqrt(2))

    def test_rmse_nrmse_identity(self, rng):
        truth = rng.uniform(10, 200, size=(6, 6, 2))
        pred = truth + rng.normal(size=truth.shape)
        mask = rng.uniform(size=truth.shape) > 0.3
        expected = nrmse(pred, truth, mask) * np.linalg.norm(truth[mask]) / math.sqrt(mask.sum())
        assert rmse(pred, truth, mask) == pytest.approx(expected, rel=1e-6)


class TestCurves:
    def test_sparsification_values(self):
        curve = sparsification_curve([1, 2, 3, 4], [1, 2, 3, 4], [1.0, 0.5])
        np.testing.assert_allclose(curve.y, [math.sqrt(7.5), math.sqrt(2.5)])

    def test_sparsification_flat_for_equal_errors(self):
        curve = sparsification_curve(np.full(20, 3.0), np.arange(20), [1.0, 0.6, 0.2])
        np.testing.assert_allclose(curve.y, 3.0)

    def test_sparsification_rises_when_anticorrelated(self):
        curve = sparsification_curve([4, 3, 2, 1], [1, 2, 3, 4], [1.0, 0.75, 0.5, 0.25])
        assert np.all(np.diff(curve.y) > 0)

    def test_sparsification_depends_only_on_ranks(self, rng):
        errors = rng.uniform(size=50)
        stds = rng.uniform(0.1, 2.0, size=50)
        recalls = [1.0, 0.8, 0.5, 0.1]
        np.testing.assert_allclose(sparsification_curve(errors, stds, recalls).y,
                                   sparsification_curve(errors, np.exp(3 * stds), recalls).y)

    def test_sparsification_stable_ties(self):
        curve = sparsification_curve([5.0, 1.0], [1.0, 1.0], [0.5])
        assert curve.y[0] == 5.0

    def test_sparsification_errors(self):
        with pytest.raises(MetricError):
            sparsification_curve([], [], [1.0])
        with pytest.raises(MetricError):
            sparsification_curve([1.0], [1.0], [0.0])

    def test_calibration_curve_matches_fitted_map(self, rng):
        mu = rng.uniform(0, 100, size=2000)
        sigma = rng.uniform(1, 5, size=2000)
        truths = rng.normal(mu, sigma * 1.3)
        posterior = VoxelPosterior(mu, sigma)
        curve, _ = calibration_curve(posterior, truths, grid_size=50)
        np.testing.assert_array_equal(curve.y, fit_calibration(posterior, truths, grid_size=50).values)

    def test_calibrated_sample_has_small_rms(self, rng):
        mu = rng.uniform(0, 100, size=100_000)
        sigma = rng.uniform(1, 5, size=100_000)
        _, rms = calibration_curve(VoxelPosterior(mu, sigma), rng.normal(mu, sigma), grid_size=100)
        assert rms < 0.01

    def test_degenerate_sigma_gives_step_curve(self):
        posterior = VoxelPosterior(np.zeros(10), np.zeros(10))
        curve, rms = calibration_curve(posterior, np.full(10, 1.0), grid_size=10)
        np.testing.assert_array_equal(curve.y[:-1], 0.0)
        assert rms > 0.5

    def test_rms_vs_diagonal_uses_interior_knots(self):
        curve = CurveSeries("c", [0.0, 0.5, 1.0], [0.0, 0.7, 1.0])
        assert rms_vs_diagonal(curve) == pytest.approx(0.2)

    def test_curve_requires_monotone_x(self):
        with pytest.raises(MetricError):
            CurveSeries("c", [0.0, 0.5, 0.4], [1.0, 2.0, 3.0])


class TestStatistics:
    def test_ttest_known_values(self):
        result = paired_ttest([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
        assert result.t == pytest.approx(3.464102, abs=1e-6)
        assert result.df == 2
        assert result.p == pytest.approx(0.074180, abs=1e-6)

    def test_ttest_antisymmetry(self, rng):
        a, b = rng.normal(size=8), rng.normal(size=8)
        forward, backward = paired_ttest(a, b), paired_ttest(b, a)
        assert backward.t == pytest.approx(-forward.t)
        assert backward.p == pytest.approx(forward.p)

    @pytest.mark.parametrize("n", [3, 6, 20])
    def test_ttest_matches_integrated_density(self, n, rng):
        a = rng.normal(size=n)
        b = a + rng.normal(0.3, 1.0, size=n)
        result = paired_ttest(a, b)
        assert result.p == pytest.approx(_student_two_sided(result.t, n - 1), abs=1e-6)

    def test_ttest_zero_variance(self):
        with pytest.raises(MetricError, match="zero variance"):
            paired_ttest([1.0, 2.0, 3.0], [0.0, 1.0, 2.0])

    def test_ttest_needs_pairs(self):
        with pytest.raises(MetricError):
            paired_ttest([1.0], [2.0])
        with pytest.raises(MetricError):
            paired_ttest([1.0, 2.0], [2.0])

    def test_boxplot(self):
        stats = boxplot_stats([1.0, 2.0, 3.0, 4.0, 100.0])
        assert stats["median"] == 3.0
        assert (stats["q1"], stats["q3"]) == (2.0, 4.0)
        assert stats["whisker_high"] == 4.0
        assert stats["outliers"] == [100.0]

    def test_pearson(self):
        assert pearson_r([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
        assert pearson_r([1, 2, 3], [5, 5, 5]) is None

    def test_interval_coverage_of_calibrated_sample(self, rng):
        mu = rng.uniform(0, 100, size=20_000)
        sigma = rng.uniform(1, 5, size=20_000)
        coverage = interval_coverage(VoxelPosterior(mu, sigma), rng.normal(mu, sigma), 0.9)
        assert coverage == pytest.approx(0.9, abs=0.01)

    def test_recalibration_restores_coverage(self, rng):
        mu = rng.uniform(0, 100, size=20_000)
        sigma = rng.uniform(1, 5, size=20_000)
        truths = rng.normal(mu, 2.0 * sigma)
        posterior = VoxelPosterior(mu, sigma)
        calibration_map = fit_calibration(posterior, truths, grid_size=100)
        assert interval_coverage(posterior, truths, 0.9) < 0.7
        assert interval_coverage(posterior, truths, 0.9, calibration_map) == pytest.approx(0.9, abs=0.02)


class TestReport:
    def test_levels(self, rng):
        subjects = [make_subject(rng, "s0"), make_subject(rng, "s1")]
        assert len(volume_level(subjects)) == 2
        # slice 0 along x is masked out, but z-slices all keep foreground
        assert len(slice_level(subjects)) == 6

    def test_build_report(self, rng):
        subjects = [make_subject(rng, f"s{i}") for i in range(3)]
        recalls = [1.0, 0.5, 0.1]
        output = build_metric_report(subjects, recalls, grid_size=20)
        report = output.report
        assert report.subjects == ["s0", "s1", "s2"]
        assert len(report.rmse) == 3 and all(value > 0 for value in report.rmse)
        assert report.sparsification["recall"] == recalls
        assert len(report.nrmse_slice) == 9
        assert report.lesion_std_mean == pytest.approx(5.0)
        assert set(report.correlations) == {"voxel", "slice", "volume"}
        assert report.interval_coverage["calibrated"] is None
        assert report.calibration_rms_recalibrated is None
        assert set(output.curves) == {"sparsification", "calibration"}
        assert len(output.scatter["voxel"]) == int(subjects[0].mask.sum())

    def test_build_report_with_map(self, rng):
        subjects = [make_subject(rng, f"s{i}") for i in range(2)]
        output = build_metric_report(subjects, [1.0, 0.5], grid_size=20, calibration_map=CalibrationMap.identity(20))
        report = output.report
        assert report.calibration_rms_recalibrated == pytest.approx(report.calibration_rms)
        assert report.interval_coverage["calibrated"] == pytest.approx(report.interval_coverage["uncalibrated"])
        assert report.recalibrated_median_rmse == pytest.approx(report.rmse, rel=1e-6)
        assert "calibration_recalibrated" in output.curves

    def test_rejects_unit_scale(self, rng):
        subject = make_subject(rng, "s0")
        subject.posterior.scale_domain = "unit"
        with pytest.raises(MetricError, match="byte"):
            build_metric_report([subject], [1.0])

    def test_compare_reports(self, rng):
        subjects = [make_subject(rng, f"s{i}") for i in range(4)]
        noisier = [make_subject(rng, f"s{i}", noise=9.0) for i in range(4)]
        a = build_metric_report(subjects, [1.0]).report
        b = build_metric_report(noisier, [1.0]).report
        comparison = compare_reports(a, b, "concrete", "monte_carlo")
        assert comparison["subjects"] == ["s0", "s1", "s2", "s3"]
        assert comparison["df"] == 3
        assert comparison["t"] < 0
        assert 0.0 <= comparison["p"] <= 1.0
