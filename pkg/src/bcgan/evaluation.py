"""
Evaluation
Masked error/uncertainty metrics, sparsification and calibration curves, paired t-test, report assembly
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import betainc

from src.bcgan.errors import MetricError
from src.bcgan.posterior import PosteriorVolume
from src.bcgan.recalibration import (CalibrationMap, VoxelPosterior, apply_calibration, calibrated_interval,
                                     empirical_frequencies, pit_values, recalibrated_median, uniform_grid)

logger = logging.getLogger(__name__)

_CEIL_TOLERANCE = 1e-9


@dataclass
class CurveSeries:
    """Named (x, y) series with strictly monotone x"""

    name: str
    x: np.ndarray
    y: np.ndarray
    x_label: str = "x"
    y_label: str = "y"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise MetricError(f"curve '{self.name}': x and y must be 1-D and equally long")
        steps = np.diff(self.x)
        if len(steps) and not (np.all(steps > 0) or np.all(steps < 0)):
            raise MetricError(f"curve '{self.name}': x must be strictly monotone")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({self.x_label: self.x, self.y_label: self.y})


@dataclass
class TTestResult:
    t: float
    df: int
    p: float


@dataclass
class MetricReport:
    """All quantitative results of one evaluation run"""

    subjects: List[str]
    rmse: List[float]
    rmse_boxplot: Dict[str, object]
    nrmse_volume: List[float]
    nrmse_slice: List[float]
    nstd_volume: List[float]
    nstd_slice: List[float]
    calibration_rms: float
    calibration_f_half: float
    sparsification: Dict[str, List[float]]
    identity_nrmse_volume: List[float]
    lesion_std_mean: Optional[float]
    nonlesion_std_mean: Optional[float]
    correlations: Dict[str, Optional[float]]
    interval_coverage: Dict[str, Optional[float]]
    clamped_voxels: int
    calibration_rms_recalibrated: Optional[float] = None
    calibration_f_half_recalibrated: Optional[float] = None
    recalibrated_median_rmse: Optional[List[float]] = None
    ttest: Optional[Dict[str, object]] = None
    extras: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


# ---------------------------------------------------------------- scalar metrics

def _masked(volume: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if volume.shape != mask.shape:
        raise MetricError(f"volume {volume.shape} and mask {mask.shape} differ in shape")
    if not mask.any():
        raise MetricError("mask is empty")
    return np.asarray(volume, dtype=np.float64)[mask]


def rmse(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    if pred.shape != truth.shape:
        raise MetricError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    error = _masked(pred, mask) - _masked(truth, mask)
    return float(np.sqrt(np.mean(error ** 2)))


def nrmse(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    """||truth - pred|| / ||truth|| over the mask"""
    if pred.shape != truth.shape:
        raise MetricError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    y = _masked(truth, mask)
    norm = float(np.linalg.norm(y))
    if norm == 0.0:
        raise MetricError("truth is all zero inside the mask")
    return float(np.linalg.norm(y - _masked(pred, mask)) / norm)


def nstd(std: np.ndarray, mask: np.ndarray) -> float:
    """Root mean square of the predictive std over the mask"""
    values = _masked(std, mask)
    return float(np.linalg.norm(values) / math.sqrt(values.size))


# ---------------------------------------------------------------- curves

def sparsification_curve(abs_errors: np.ndarray, stds: np.ndarray, recalls: Sequence[float]) -> CurveSeries:
    """
    RMSE over the ceil(r N) least-uncertain voxels for each recall r

    Ties in std keep their original index order.
    """
    errors = np.ravel(np.asarray(abs_errors, dtype=np.float64))
    stds = np.ravel(np.asarray(stds, dtype=np.float64))
    if errors.size == 0:
        raise MetricError("sparsification needs at least one voxel")
    if errors.shape != stds.shape:
        raise MetricError(f"{errors.size} errors but {stds.size} stds")
    recalls = np.asarray(recalls, dtype=np.float64)
    if np.any((recalls <= 0) | (recalls > 1)):
        raise MetricError("recalls must lie in (0, 1]")
    order = np.argsort(stds, kind="stable")
    cumulative = np.cumsum(errors[order] ** 2)
    kept = np.maximum(np.ceil(recalls * errors.size - _CEIL_TOLERANCE).astype(int), 1)
    values = np.sqrt(cumulative[kept - 1] / kept)
    return CurveSeries("sparsification", recalls, values, "recall", "rmse")


def calibration_curve(posteriors, truths, grid_size: int = 100,
                      sigma_floor: float = 1e-6) -> Tuple[CurveSeries, float]:
    """Observed vs expected confidence level and its RMS distance from the diagonal"""
    pit = pit_values(posteriors, truths, sigma_floor)
    return calibration_curve_from_pit(pit, grid_size)


def calibration_curve_from_pit(pit: np.ndarray, grid_size: int = 100,
                               name: str = "calibration") -> Tuple[CurveSeries, float]:
    grid = uniform_grid(grid_size)
    frequencies = empirical_frequencies(pit, grid)
    curve = CurveSeries(name, grid, frequencies, "expected_confidence", "observed_confidence")
    return curve, rms_vs_diagonal(curve)


def recalibrated_calibration_curve(posteriors, truths, calibration_map: CalibrationMap, grid_size: int = 100,
                                   sigma_floor: float = 1e-6) -> Tuple[CurveSeries, float]:
    """Calibration curve of the recalibrated posteriors, whose PIT is f(PIT)"""
    pit = pit_values(posteriors, truths, sigma_floor)
    return calibration_curve_from_pit(apply_calibration(calibration_map, pit), grid_size, "calibration_recalibrated")


def rms_vs_diagonal(curve: CurveSeries) -> float:
    interior = slice(1, -1) if len(curve.x) > 2 else slice(None)
    return float(np.sqrt(np.mean((curve.y[interior] - curve.x[interior]) ** 2)))


# ---------------------------------------------------------------- statistics

def paired_ttest(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """
    Two-sided paired t-test

    p = I_{df / (df + t^2)}(df / 2, 1 / 2), the Student tail through the
    regularized incomplete beta function.
    """
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    if a_arr.shape != b_arr.shape or a_arr.ndim != 1:
        raise MetricError("paired samples must be 1-D and equally long")
    n = a_arr.size
    if n < 2:
        raise MetricError(f"paired t-test needs at least 2 pairs, got {n}")
    d = a_arr - b_arr
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise MetricError("differences have zero variance; t is undefined")
    t = float(np.mean(d) / (sd / math.sqrt(n)))
    df = n - 1
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTestResult(t, df, p)


def boxplot_stats(values: Sequence[float]) -> Dict[str, object]:
    """Quartiles, whiskers at the extreme data inside q1 - 1.5 IQR .. q3 + 1.5 IQR, and outliers"""
    data = np.asarray(values, dtype=np.float64)
    if data.size == 0:
        raise MetricError("boxplot of an empty sample")
    q1, median, q3 = (float(v) for v in np.percentile(data, [25, 50, 75]))
    iqr = q3 - q1
    low_fence, high_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = data[(data >= low_fence) & (data <= high_fence)]
    return {
        "q1": q1,
        "median": median,
        "q3": q3,
        "mean": float(data.mean()),
        "whisker_low": float(inside.min()),
        "whisker_high": float(inside.max()),
        "outliers": [float(v) for v in data[(data < low_fence) | (data > high_fence)]],
    }


def pearson_r(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    """Pearson correlation, or None when either sample is constant"""
    x = np.ravel(np.asarray(x, dtype=np.float64))
    y = np.ravel(np.asarray(y, dtype=np.float64))
    if x.size < 2 or np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def interval_coverage(post: VoxelPosterior, truths: np.ndarray, level: float,
                      calibration_map: Optional[CalibrationMap] = None) -> float:
    """Fraction of truths inside the central credible interval (identity map when none is given)"""
    interval = calibrated_interval(post, calibration_map or CalibrationMap.identity(), level)
    y = np.asarray(truths, dtype=np.float64)
    return float(np.mean((y >= interval.lo) & (y <= interval.hi)))


# ---------------------------------------------------------------- error vs uncertainty

@dataclass
class SubjectPrediction:
    """Byte-scale posterior of one subject with its truth, source and lesion mask"""

    subject_id: str
    posterior: PosteriorVolume
    truth: np.ndarray
    source: np.ndarray
    lesion_mask: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.posterior.foreground_mask


def voxel_level(subject: SubjectPrediction) -> pd.DataFrame:
    mask = subject.mask
    error = np.abs(subject.posterior.mean.astype(np.float64) - subject.truth)[mask]
    return pd.DataFrame({"abs_error": error, "std": subject.posterior.std[mask].astype(np.float64)})


def slice_level(subjects: Sequence[SubjectPrediction]) -> pd.DataFrame:
    """nRMSE and nSTD of every z-slice whose mask and truth are non-empty"""
    rows = []
    for subject in subjects:
        for k in range(subject.truth.shape[2]):
            mask = subject.mask[:, :, k]
            truth = subject.truth[:, :, k]
            if not mask.any() or not np.any(truth[mask]):
                continue
            rows.append({
                "subject_id": subject.subject_id,
                "slice": k,
                "nrmse": nrmse(subject.posterior.mean[:, :, k], truth, mask),
                "nstd": nstd(subject.posterior.std[:, :, k], mask),
            })
    return pd.DataFrame(rows, columns=["subject_id", "slice", "nrmse", "nstd"])


def volume_level(subjects: Sequence[SubjectPrediction]) -> pd.DataFrame:
    rows = [{
        "subject_id": s.subject_id,
        "nrmse": nrmse(s.posterior.mean, s.truth, s.mask),
        "nstd": nstd(s.posterior.std, s.mask),
    } for s in subjects]
    return pd.DataFrame(rows, columns=["subject_id", "nrmse", "nstd"])


def pooled_posterior(subjects: Sequence[SubjectPrediction]) -> Tuple[VoxelPosterior, np.ndarray]:
    """Foreground voxels of all subjects as one VoxelPosterior plus truths"""
    mu = np.concatenate([s.posterior.mean[s.mask] for s in subjects])
    sigma = np.concatenate([s.posterior.std[s.mask] for s in subjects])
    truths = np.concatenate([s.truth[s.mask] for s in subjects])
    return VoxelPosterior(mu, sigma), truths.astype(np.float64)


# ---------------------------------------------------------------- report

@dataclass
class EvaluationOutput:
    report: MetricReport
    curves: Dict[str, CurveSeries]
    scatter: Dict[str, pd.DataFrame]


def build_metric_report(subjects: Sequence[SubjectPrediction], recalls: Sequence[float], grid_size: int = 100,
                        sigma_floor: float = 1e-6, interval_level: float = 0.95,
                        calibration_map: Optional[CalibrationMap] = None) -> EvaluationOutput:
    """
    Compute every metric, curve and scatter table over a set of test subjects

    The first subject provides the voxel-level scatter. Sparsification and
    calibration pool the foreground voxels of all subjects.
    """
    if not subjects:
        raise MetricError("no subjects to evaluate")
    for subject in subjects:
        if subject.posterior.scale_domain != "byte":
            raise MetricError(f"{subject.subject_id}: metrics are computed on the byte scale")

    rmse_values = [rmse(s.posterior.mean, s.truth, s.mask) for s in subjects]
    volumes = volume_level(subjects)
    slices = slice_level(subjects)
    voxels = voxel_level(subjects[0])

    pooled, truths = pooled_posterior(subjects)
    sparsification = sparsification_curve(np.abs(pooled.mu - truths), pooled.sigma, recalls)
    calibration, calibration_rms = calibration_curve(pooled, truths, grid_size, sigma_floor)
    curves = {"sparsification": sparsification, "calibration": calibration}

    lesion_std = [s.posterior.std[s.lesion_mask & s.mask] for s in subjects]
    normal_std = [s.posterior.std[~s.lesion_mask & s.mask] for s in subjects]
    lesion_values = np.concatenate(lesion_std) if lesion_std else np.zeros(0)
    normal_values = np.concatenate(normal_std) if normal_std else np.zeros(0)

    report = MetricReport(
        subjects=[s.subject_id for s in subjects],
        rmse=rmse_values,
        rmse_boxplot=boxplot_stats(rmse_values),
        nrmse_volume=volumes["nrmse"].tolist(),
        nrmse_slice=slices["nrmse"].tolist(),
        nstd_volume=volumes["nstd"].tolist(),
        nstd_slice=slices["nstd"].tolist(),
        calibration_rms=calibration_rms,
        calibration_f_half=float(np.interp(0.5, calibration.x, calibration.y)),
        sparsification={"recall": sparsification.x.tolist(), "rmse": sparsification.y.tolist()},
        identity_nrmse_volume=[nrmse(s.source, s.truth, s.mask) for s in subjects],
        lesion_std_mean=float(lesion_values.mean()) if lesion_values.size else None,
        nonlesion_std_mean=float(normal_values.mean()) if normal_values.size else None,
        correlations={
            "voxel": pearson_r(voxels["abs_error"], voxels["std"]),
            "slice": pearson_r(slices["nrmse"], slices["nstd"]) if len(slices) else None,
            "volume": pearson_r(volumes["nrmse"], volumes["nstd"]),
        },
        interval_coverage={
            "level": interval_level,
            "uncalibrated": interval_coverage(pooled, truths, interval_level),
            "calibrated": None,
        },
        clamped_voxels=int(sum(s.posterior.clamped_voxels for s in subjects)),
    )

    if calibration_map is not None:
        recalibrated, recalibrated_rms = recalibrated_calibration_curve(pooled, truths, calibration_map,
                                                                        grid_size, sigma_floor)
        curves["calibration_recalibrated"] = recalibrated
        report.calibration_rms_recalibrated = recalibrated_rms
        report.calibration_f_half_recalibrated = float(np.interp(0.5, recalibrated.x, recalibrated.y))
        report.interval_coverage["calibrated"] = interval_coverage(pooled, truths, interval_level,
                                                                   calibration_map)
        report.recalibrated_median_rmse = [
            rmse(recalibrated_median(VoxelPosterior(s.posterior.mean, s.posterior.std), calibration_map),
                 s.truth, s.mask)
            for s in subjects
        ]

    logger.info("evaluated %d subjects: mean RMSE %.3f, calibration RMS %.4f", len(subjects),
                float(np.mean(rmse_values)), calibration_rms)
    scatter = {"voxel": voxels, "slice": slices, "volume": volumes}
    return EvaluationOutput(report, curves, scatter)


def compare_reports(a: MetricReport, b: MetricReport, label_a: str = "a", label_b: str = "b") -> Dict[str, object]:
    """Paired t-test of per-subject RMSE over the subjects both reports share"""
    shared = [sid for sid in a.subjects if sid in set(b.subjects)]
    rmse_a = [a.rmse[a.subjects.index(sid)] for sid in shared]
    rmse_b = [b.rmse[b.subjects.index(sid)] for sid in shared]
    result = paired_ttest(rmse_a, rmse_b)
    return {"a": label_a, "b": label_b, "subjects": shared, "rmse_a": rmse_a, "rmse_b": rmse_b,
            "t": result.t, "df": result.df, "p": result.p}
