"""
Dropout testing
Repeated stochastic generator passes summarized as per-voxel predictive mean and standard deviation
"""

import json
import logging
import os
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np

from src.bcgan.dataset import volume_slices
from src.bcgan.errors import PosteriorError
from src.bcgan.networks import Mode, NetworkInstance
from src.bcgan.rvol import read_rvol, write_rvol

logger = logging.getLogger(__name__)

BYTE_SCALE = 255.0
SIDECAR_NAME = "posterior.json"


@dataclass
class PosteriorVolume:
    """Predictive mean/std volumes over the foreground region"""

    mean: np.ndarray
    std: np.ndarray
    foreground_mask: np.ndarray
    num_passes: int
    scale_domain: str = "unit"
    seed: int = 0
    clamped_voxels: int = 0

    def __post_init__(self):
        if self.mean.shape != self.std.shape or self.mean.shape != self.foreground_mask.shape:
            raise PosteriorError(f"mean {self.mean.shape}, std {self.std.shape} and mask "
                                 f"{self.foreground_mask.shape} must share a shape")
        if self.scale_domain not in ("unit", "byte"):
            raise PosteriorError(f"unknown scale domain '{self.scale_domain}'")
        if np.any(self.std < 0):
            raise PosteriorError("negative standard deviation")


class PassAccumulator:
    """Running mean and sum of squared deviations (Welford) over stochastic passes"""

    def __init__(self, shape: Tuple[int, ...]):
        self.count = 0
        self.mean = np.zeros(shape, dtype=np.float64)
        self.m2 = np.zeros(shape, dtype=np.float64)

    def add(self, sample: np.ndarray) -> None:
        self.count += 1
        delta = sample - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (sample - self.mean)

    def std(self) -> np.ndarray:
        if self.count < 2:
            raise PosteriorError(f"standard deviation needs at least 2 passes, got {self.count}")
        return np.sqrt(np.maximum(self.m2 / (self.count - 1), 0.0))


def summarize_passes(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample mean and Bessel-corrected standard deviation along the first axis

    Args:
        samples: (T, ...) stack of pass outputs, T >= 2
    """
    if samples.shape[0] < 2:
        raise PosteriorError(f"need at least 2 passes, got {samples.shape[0]}")
    accumulator = PassAccumulator(samples.shape[1:])
    for sample in samples:
        accumulator.add(sample.astype(np.float64))
    return accumulator.mean, accumulator.std()


def mc_predict(net: NetworkInstance, volume_a: np.ndarray, num_passes: int, seed: int,
               mask: Optional[np.ndarray] = None, batch_slices: int = 8,
               progress: Optional[Callable[[int], None]] = None) -> PosteriorVolume:
    """
    Run num_passes stochastic generator passes over every z-slice of a source volume

    Slices are normalized like the training data and processed in batches of
    batch_slices with batchnorm on running statistics and dropout active. Pass t
    of the batch starting at slice k uses dropout streams with pass index
    t * Z + k, so results do not depend on scheduling.

    Args:
        net: Generator
        volume_a: Source volume [x, y, z]
        num_passes: T_mc >= 2
        seed: Run seed for the dropout streams
        mask: Foreground mask; defaults to volume_a > 0
        batch_slices: Slices per forward pass
        progress: Called with the number of slices finished after each batch

    Returns:
        PosteriorVolume in the unit domain
    """
    if num_passes < 2:
        raise PosteriorError(f"dropout testing needs at least 2 passes, got {num_passes}")
    if volume_a.ndim != 3:
        raise PosteriorError(f"source volume must be 3-D, got shape {volume_a.shape}")
    if not net.dropout_layers:
        logger.warning("generator has no dropout layers; predictive std will be identically 0")
    mask = volume_a > 0 if mask is None else np.asarray(mask, dtype=bool)

    slices = volume_slices(volume_a)
    depth = slices.shape[0]
    mean = np.zeros(slices.shape, dtype=np.float64)
    std = np.zeros(slices.shape, dtype=np.float64)
    for start in range(0, depth, batch_slices):
        batch = slices[start:start + batch_slices][:, None]
        accumulator = PassAccumulator(batch.shape)
        for t in range(num_passes):
            sample = net.predict(batch, Mode.EVAL_STOCHASTIC, seed=seed, pass_index=t * depth + start)
            accumulator.add(sample.astype(np.float64))
        mean[start:start + len(batch)] = accumulator.mean[:, 0]
        std[start:start + len(batch)] = accumulator.std()[:, 0]
        if progress is not None:
            progress(len(batch))

    posterior = PosteriorVolume(
        mean=np.moveaxis(mean, 0, 2).astype(np.float32),
        std=np.moveaxis(std, 0, 2).astype(np.float32),
        foreground_mask=mask,
        num_passes=num_passes,
        scale_domain="unit",
        seed=seed,
    )
    logger.debug("dropout testing: %d passes over %d slices, mean std %.4g", num_passes, depth,
                 float(posterior.std[mask].mean()) if mask.any() else 0.0)
    return posterior


def rescale_to_byte(posterior: PosteriorVolume) -> PosteriorVolume:
    """
    Map a unit-domain posterior to [0, 255]

    Mean and std are multiplied by 255; the mean is clamped and clamped voxels
    are counted on the result.
    """
    if posterior.scale_domain != "unit":
        raise PosteriorError("posterior is already on the byte scale")
    scaled = posterior.mean.astype(np.float64) * BYTE_SCALE
    clamped = int(np.count_nonzero((scaled < 0.0) | (scaled > BYTE_SCALE)))
    if clamped:
        logger.warning("clamped %d mean voxels to [0, 255]", clamped)
    return replace(
        posterior,
        mean=np.clip(scaled, 0.0, BYTE_SCALE).astype(np.float32),
        std=(posterior.std.astype(np.float64) * BYTE_SCALE).astype(np.float32),
        scale_domain="byte",
        clamped_voxels=posterior.clamped_voxels + clamped,
    )


def save_posterior(posterior: PosteriorVolume, directory: str, subject_id: Optional[str] = None) -> None:
    """Write mean/std/mask RVOL files and the JSON sidecar"""
    os.makedirs(directory, exist_ok=True)
    write_rvol(posterior.mean, os.path.join(directory, "mean.rvol"))
    write_rvol(posterior.std, os.path.join(directory, "std.rvol"))
    write_rvol(posterior.foreground_mask, os.path.join(directory, "mask.rvol"))
    sidecar = {
        "subject_id": subject_id,
        "num_passes": posterior.num_passes,
        "seed": posterior.seed,
        "scale_domain": posterior.scale_domain,
        "clamped_voxels": posterior.clamped_voxels,
    }
    with open(os.path.join(directory, SIDECAR_NAME), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_posterior(directory: str) -> PosteriorVolume:
    try:
        with open(os.path.join(directory, SIDECAR_NAME), "r", encoding="utf-8") as f:
            sidecar = json.load(f)
    except (OSError, ValueError) as exc:
        raise PosteriorError(f"cannot read posterior sidecar in {directory}: {exc}") from exc
    return PosteriorVolume(
        mean=read_rvol(os.path.join(directory, "mean.rvol")),
        std=read_rvol(os.path.join(directory, "std.rvol")),
        foreground_mask=read_rvol(os.path.join(directory, "mask.rvol")) > 0.5,
        num_passes=int(sidecar["num_passes"]),
        scale_domain=sidecar["scale_domain"],
        seed=int(sidecar["seed"]),
        clamped_voxels=int(sidecar.get("clamped_voxels", 0)),
    )
