"""
Synthetic phantoms
Paired-contrast head volumes with nested tissue classes, bias fields, noise and optional lesions
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from src.bcgan.config import PhantomConfig
from src.bcgan.rng import derive_stream

logger = logging.getLogger(__name__)

DEFORMATION_STRENGTH = 0.15
LESION_RADIUS_RANGE = (0.10, 0.20)
LESION_CENTER_DEPTH = 0.5


@dataclass
class VolumePair:
    """Co-registered contrast A / contrast B volumes with their ground-truth labels"""

    contrast_a: np.ndarray
    contrast_b: np.ndarray
    labels: np.ndarray
    lesion_mask: np.ndarray
    subject_id: str
    seed: int

    @property
    def foreground(self) -> np.ndarray:
        return self.labels > 0

    @property
    def has_lesion(self) -> bool:
        return bool(self.lesion_mask.any())


def _normalized_grid(shape):
    axes = [np.linspace(-1.0, 1.0, n) for n in shape]
    return np.meshgrid(*axes, indexing="ij")


def _smooth_field(rng: np.random.Generator, shape, smoothness: float = 6.0) -> np.ndarray:
    """Zero-mean random field scaled to max |value| = 1"""
    field = gaussian_filter(rng.standard_normal(shape), sigma=[n / smoothness for n in shape], mode="wrap")
    field -= field.mean()
    peak = np.abs(field).max()
    return field / peak if peak > 0 else field


def lesion_intensity_pair(cfg: PhantomConfig) -> tuple:
    """
    (A, B) intensities written into lesion voxels

    With lesion_contrast_flip the configured pair is used as is; otherwise the B
    value follows the tissue trend, interpolated from the table at the lesion's A value.
    """
    lesion_a, lesion_b = cfg.lesion_intensity
    if cfg.lesion_contrast_flip:
        return lesion_a, lesion_b
    table = sorted(cfg.class_intensity_table)
    return lesion_a, float(np.interp(lesion_a, [a for a, _ in table], [b for _, b in table]))


def generate_subject(seed: int, cfg: PhantomConfig, subject_id: Optional[str] = None) -> VolumePair:
    """
    Generate one subject deterministically from its seed

    An ellipsoidal head is split into num_classes deformed radial shells (class 1
    outermost). Each contrast takes its class mean, a smooth multiplicative bias
    field and foreground-only Gaussian noise, then is clamped to [0, 1]. With
    probability lesion_probability an ellipsoidal lesion overrides both contrasts
    with an intensity pair that is off the class table; lesion voxels keep their
    tissue label.

    Args:
        seed: Subject seed
        cfg: Phantom settings
        subject_id: Identifier stored on the result (defaults to "seed_<seed>")

    Returns:
        VolumePair with float32 contrasts, uint8 labels and a boolean lesion mask
    """
    rng = derive_stream(seed, "phantom")
    shape = tuple(cfg.volume_shape)
    x, y, z = _normalized_grid(shape)

    # every draw happens unconditionally so the stream layout never depends on the options
    radii = np.asarray(cfg.head_radii) * (1.0 + cfg.shape_jitter * rng.uniform(-1.0, 1.0, size=3))
    deformation = _smooth_field(rng, shape)
    bias_a = _smooth_field(rng, shape)
    bias_b = _smooth_field(rng, shape)
    noise_a = rng.standard_normal(shape)
    noise_b = rng.standard_normal(shape)
    lesion_draw = rng.uniform()
    direction = rng.standard_normal(3)
    depth = rng.uniform(0.0, LESION_CENTER_DEPTH)
    lesion_radii = rng.uniform(*LESION_RADIUS_RANGE, size=3)

    rho = np.sqrt((x / radii[0]) ** 2 + (y / radii[1]) ** 2 + (z / radii[2]) ** 2)
    head = rho <= 1.0
    shell = np.minimum(np.floor(rho * (1.0 + DEFORMATION_STRENGTH * deformation) * cfg.num_classes),
                       cfg.num_classes - 1)
    labels = np.where(head, cfg.num_classes - shell, 0).astype(np.uint8)

    table = np.asarray(cfg.class_intensity_table, dtype=np.float64)
    mean_a = np.concatenate([[0.0], table[:, 0]])[labels]
    mean_b = np.concatenate([[0.0], table[:, 1]])[labels]

    lesion_mask = np.zeros(shape, dtype=bool)
    if lesion_draw < cfg.lesion_probability:
        center = direction / (np.linalg.norm(direction) or 1.0) * depth * radii
        distance = (((x - center[0]) / lesion_radii[0]) ** 2
                    + ((y - center[1]) / lesion_radii[1]) ** 2
                    + ((z - center[2]) / lesion_radii[2]) ** 2)
        lesion_mask = (distance <= 1.0) & head
        lesion_a, lesion_b = lesion_intensity_pair(cfg)
        mean_a = np.where(lesion_mask, lesion_a, mean_a)
        mean_b = np.where(lesion_mask, lesion_b, mean_b)

    amplitude = cfg.bias_field_amplitude
    contrast_a = mean_a * (1.0 + amplitude * bias_a) + np.where(head, cfg.noise_sigma * noise_a, 0.0)
    contrast_b = mean_b * (1.0 + amplitude * bias_b) + np.where(head, cfg.noise_sigma * noise_b, 0.0)
    contrast_a = np.where(head, np.clip(contrast_a, 0.0, 1.0), 0.0).astype(np.float32)
    contrast_b = np.where(head, np.clip(contrast_b, 0.0, 1.0), 0.0).astype(np.float32)

    pair = VolumePair(contrast_a, contrast_b, labels, lesion_mask,
                      subject_id if subject_id is not None else f"seed_{seed}", int(seed))
    logger.debug("generated %s: foreground %.3f, lesion voxels %d", pair.subject_id, head.mean(),
                 int(lesion_mask.sum()))
    return pair


def table_oracle(pair: VolumePair, cfg: PhantomConfig) -> np.ndarray:
    """Contrast-B prediction from the tissue labels alone (exact on clean non-lesion voxels)"""
    table = np.asarray(cfg.class_intensity_table, dtype=np.float64)
    return np.concatenate([[0.0], table[:, 1]])[pair.labels].astype(np.float32)


def normalize_slice(image: np.ndarray) -> np.ndarray:
    """
    Min-max normalize a 2-D slice to [0, 1]

    Constant slices map to all zeros.
    """
    image = np.asarray(image)
    low, high = float(image.min()), float(image.max())
    if high - low <= 0.0:
        return np.zeros_like(image, dtype=np.float32)
    return ((image - low) / (high - low)).astype(np.float32)
