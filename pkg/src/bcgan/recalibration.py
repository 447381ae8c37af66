"""
Probabilistic recalibration
Empirical p -> f maps over Gaussian predictive posteriors, their inverse and calibrated intervals
"""

import logging
import os
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import ndtr, ndtri

from src.bcgan.errors import CalibrationError

logger = logging.getLogger(__name__)

MAP_HEADER = "# calibration_map v1, T_cal={size}"
_HEADER_PATTERN = re.compile(r"^# calibration_map v1, T_cal=(\d+)\s*$")
DEFAULT_SIGMA_FLOOR = 1e-6

ArrayLike = Union[float, np.ndarray]


@dataclass
class VoxelPosterior:
    """Gaussian predictive posterior N(mu, sigma^2) of one voxel or an array of voxels"""

    mu: ArrayLike
    sigma: ArrayLike

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape:
            raise CalibrationError(f"mu {self.mu.shape} and sigma {self.sigma.shape} differ in shape")
        if np.any(self.sigma < 0):
            raise CalibrationError("sigma must be non-negative")

    @classmethod
    def stack(cls, posteriors: Sequence["VoxelPosterior"]) -> "VoxelPosterior":
        if not posteriors:
            return cls(np.zeros(0), np.zeros(0))
        return cls(np.concatenate([np.ravel(p.mu) for p in posteriors]),
                   np.concatenate([np.ravel(p.sigma) for p in posteriors]))


@dataclass
class CalibrationMap:
    """Piecewise-linear map from nominal to observed probability"""

    grid: np.ndarray
    values: np.ndarray
    calibration_set_size: int

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grid.ndim != 1 or self.grid.shape != self.values.shape or len(self.grid) < 2:
            raise CalibrationError("grid and values must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(self.grid) <= 0) or self.grid[0] != 0.0 or self.grid[-1] != 1.0:
            raise CalibrationError("grid must ascend strictly from 0 to 1")
        if np.any(np.diff(self.values) < 0):
            raise CalibrationError("calibration values must be nondecreasing")
        if self.values[0] != 0.0 or self.values[-1] != 1.0:
            raise CalibrationError("calibration values must be pinned to f(0)=0 and f(1)=1")

    @classmethod
    def identity(cls, grid_size: int = 100) -> "CalibrationMap":
        grid = uniform_grid(grid_size)
        return cls(grid, grid.copy(), 0)


@dataclass
class IntervalResult:
    """Credible interval bounds"""

    lo: ArrayLike
    hi: ArrayLike


def normal_cdf(x: ArrayLike) -> ArrayLike:
    return ndtr(x)


def normal_quantile(p: ArrayLike) -> ArrayLike:
    """Standard normal quantile; p must lie strictly inside (0, 1)"""
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any((p_arr <= 0.0) | (p_arr >= 1.0)) or np.any(np.isnan(p_arr)):
        raise CalibrationError("normal_quantile needs p in the open interval (0, 1)")
    return ndtri(p)


def uniform_grid(grid_size: int) -> np.ndarray:
    if grid_size < 1:
        raise CalibrationError(f"grid_size must be positive, got {grid_size}")
    return np.linspace(0.0, 1.0, grid_size + 1)


def _as_posterior(posteriors: Union[VoxelPosterior, Sequence[VoxelPosterior]]) -> VoxelPosterior:
    if isinstance(posteriors, VoxelPosterior):
        return posteriors
    return VoxelPosterior.stack(list(posteriors))


def pit_values(posteriors: Union[VoxelPosterior, Sequence[VoxelPosterior]], truths: ArrayLike,
               sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> np.ndarray:
    """
    Probability integral transform Phi((y - mu) / max(sigma, sigma_floor)), flattened

    Raises:
        CalibrationError: Empty or mismatched inputs
    """
    posterior = _as_posterior(posteriors)
    mu = np.ravel(posterior.mu)
    sigma = np.maximum(np.ravel(posterior.sigma), sigma_floor)
    y = np.ravel(np.asarray(truths, dtype=np.float64))
    if y.size == 0:
        raise CalibrationError("calibration set is empty")
    if y.shape != mu.shape:
        raise CalibrationError(f"{mu.size} posteriors but {y.size} truths")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(y))):
        raise CalibrationError("non-finite posterior mean or truth")
    return ndtr((y - mu) / sigma)


def empirical_frequencies(pit: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Fraction of PIT values <= each grid probability, endpoints pinned to 0 and 1"""
    pit = np.sort(np.ravel(pit))
    if pit.size == 0:
        raise CalibrationError("calibration set is empty")
    values = np.searchsorted(pit, grid, side="right") / pit.size
    values[0] = 0.0
    values[-1] = 1.0
    return values


def fit_calibration(posteriors: Union[VoxelPosterior, Sequence[VoxelPosterior]], truths: ArrayLike,
                    grid_size: int = 100, sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> CalibrationMap:
    """
    Fit the empirical recalibration map

    f_k is the fraction of calibration voxels whose truth lies at or below the
    p_k quantile of its predictive Gaussian, counted through the equivalent PIT
    condition Phi((y - mu) / sigma) <= p_k.

    Args:
        posteriors: Predictive posteriors of the calibration voxels
        truths: Observed intensities, same order
        grid_size: Number of grid intervals G (G + 1 knots)
        sigma_floor: Lower bound applied to sigma

    Returns:
        CalibrationMap with calibration_set_size = number of voxels
    """
    pit = pit_values(posteriors, truths, sigma_floor)
    grid = uniform_grid(grid_size)
    calibration_map = CalibrationMap(grid, empirical_frequencies(pit, grid), int(pit.size))
    logger.debug("fitted calibration map on %d voxels, f(0.5)=%.4f", pit.size,
                 float(apply_calibration(calibration_map, 0.5)))
    return calibration_map


def apply_calibration(calibration_map: CalibrationMap, p: ArrayLike) -> ArrayLike:
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any((p_arr < 0.0) | (p_arr > 1.0)):
        raise CalibrationError("probabilities must lie in [0, 1]")
    result = np.interp(p_arr, calibration_map.grid, calibration_map.values)
    return float(result) if np.ndim(result) == 0 else result


def invert_calibration(calibration_map: CalibrationMap, target: ArrayLike) -> ArrayLike:
    """
    Smallest p with f(p) = target on the piecewise-linear map

    Flat segments resolve to their left edge.
    """
    target_arr = np.asarray(target, dtype=np.float64)
    if np.any((target_arr < 0.0) | (target_arr > 1.0)):
        raise CalibrationError("target probabilities must lie in [0, 1]")
    grid, values = calibration_map.grid, calibration_map.values
    k = np.searchsorted(values, target_arr, side="left")
    k = np.clip(k, 1, len(grid) - 1)
    f_lo, f_hi = values[k - 1], values[k]
    span = f_hi - f_lo
    with np.errstate(divide="ignore", invalid="ignore"):
        fraction = np.where(span > 0, (target_arr - f_lo) / span, 0.0)
    p = grid[k - 1] + np.clip(fraction, 0.0, 1.0) * (grid[k] - grid[k - 1])
    p = np.where(target_arr <= values[0], grid[0], p)
    return float(p) if np.ndim(p) == 0 else p


def calibrated_interval(post: VoxelPosterior, calibration_map: CalibrationMap, level: float) -> IntervalResult:
    """
    Central credible interval after recalibration

    The interval is [mu + sigma Phi^-1(p_lo), mu + sigma Phi^-1(p_hi)] with
    p_lo = f^-1((1 - level) / 2) and p_hi = f^-1((1 + level) / 2). The map is
    continuous and pinned to f(0)=0, f(1)=1, so both inverses lie strictly
    inside (0, 1) for every level in (0, 1) and the bounds are always finite.
    """
    if not 0.0 < level < 1.0:
        raise CalibrationError(f"level must lie in (0, 1), got {level}")
    z_lo = normal_quantile(invert_calibration(calibration_map, (1.0 - level) / 2.0))
    z_hi = normal_quantile(invert_calibration(calibration_map, (1.0 + level) / 2.0))
    lo = post.mu + post.sigma * z_lo
    hi = post.mu + post.sigma * z_hi
    if np.ndim(lo) == 0:
        return IntervalResult(float(lo), float(hi))
    return IntervalResult(lo, hi)


def recalibrated_median(post: VoxelPosterior, calibration_map: CalibrationMap) -> ArrayLike:
    """Point prediction mu + sigma Phi^-1(f^-1(0.5))"""
    median = post.mu + post.sigma * normal_quantile(invert_calibration(calibration_map, 0.5))
    return float(median) if np.ndim(median) == 0 else median


def save_calibration_map(calibration_map: CalibrationMap, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frame = pd.DataFrame({"p": calibration_map.grid, "f": calibration_map.values})
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(MAP_HEADER.format(size=calibration_map.calibration_set_size) + "\n")
        frame.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")


def load_calibration_map(path: str) -> CalibrationMap:
    """
    Read a map written by save_calibration_map

    Raises:
        CalibrationError: Missing header, malformed columns or a map violating its invariants
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline()
            match = _HEADER_PATTERN.match(header)
            if match is None:
                raise CalibrationError(f"{path}: missing '# calibration_map v1' header")
            frame = pd.read_csv(f)
    except OSError as exc:
        raise CalibrationError(f"cannot read calibration map {path}: {exc}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise CalibrationError(f"{path}: malformed calibration map: {exc}") from exc
    if list(frame.columns) != ["p", "f"]:
        raise CalibrationError(f"{path}: expected columns p,f, got {list(frame.columns)}")
    return CalibrationMap(frame["p"].to_numpy(), frame["f"].to_numpy(), int(match.group(1)))
