"""
Synthetic byte-scale subject predictions for metric and report tests
"""

import numpy as np

from src.bcgan.evaluation import SubjectPrediction
from src.bcgan.posterior import PosteriorVolume


def make_subject(rng: np.random.Generator, subject_id: str, shape=(8, 8, 3), noise: float = 5.0,
                 lesion: bool = True) -> SubjectPrediction:
    """Truth in [50, 200], mean = truth + N(0, noise^2), std = noise; the x = 0 plane is background"""
    truth = rng.uniform(50.0, 200.0, size=shape)
    mask = np.ones(shape, dtype=bool)
    mask[0] = False
    truth[~mask] = 0.0
    mean = np.where(mask, truth + rng.normal(0.0, noise, size=shape), 0.0)
    std = np.where(mask, noise, 0.0)
    lesion_mask = np.zeros(shape, dtype=bool)
    if lesion:
        lesion_mask[3:5, 3:5, 1] = True
    posterior = PosteriorVolume(mean.astype(np.float32), std.astype(np.float32), mask, num_passes=4,
                                scale_domain="byte")
    source = np.where(mask, 255.0 - truth, 0.0)
    return SubjectPrediction(subject_id, posterior, truth, source, lesion_mask)
