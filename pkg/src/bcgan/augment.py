"""
Slice augmentation
Bilinear resize followed by one random crop shared by the source and target images
"""

from typing import Tuple

import numpy as np
from scipy.ndimage import map_coordinates

from src.bcgan.errors import ShapeError


def bilinear_resize(image: np.ndarray, size: int) -> np.ndarray:
    """
    Resize a 2-D image to size x size with align-corners bilinear weights

    Corner pixels map onto corner pixels, so constants stay constant and a
    [[0, 1], [0, 1]] image resized to 3x3 has a middle column of 0.5.
    """
    if image.ndim != 2:
        raise ShapeError(f"bilinear_resize expects a 2-D image, got shape {image.shape}")
    rows = np.linspace(0.0, image.shape[0] - 1, size)
    cols = np.linspace(0.0, image.shape[1] - 1, size)
    grid = np.meshgrid(rows, cols, indexing="ij")
    resized = map_coordinates(image.astype(np.float64), grid, order=1, mode="nearest")
    return resized.astype(image.dtype, copy=False)


def augment(source: np.ndarray, target: np.ndarray, rng: np.random.Generator, resize_to: int,
            crop_to: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Resize both images to resize_to^2 and cut the same random crop_to^2 window

    Args:
        source: Contrast-A slice
        target: Contrast-B slice of the same shape
        rng: Augmentation stream
        resize_to: Side length after resizing
        crop_to: Side length of the crop (<= resize_to)

    Returns:
        (cropped source, cropped target)
    """
    if source.shape != target.shape:
        raise ShapeError(f"augment: source {source.shape} and target {target.shape} differ")
    if crop_to > resize_to:
        raise ShapeError(f"crop {crop_to} is larger than the resized image {resize_to}")
    resized_source = bilinear_resize(source, resize_to)
    resized_target = bilinear_resize(target, resize_to)
    span = resize_to - crop_to
    top, left = (0, 0) if span == 0 else (int(v) for v in rng.integers(0, span + 1, size=2))
    window = (slice(top, top + crop_to), slice(left, left + crop_to))
    return resized_source[window], resized_target[window]
