"""
Tests for the synthetic phantom generator
"""

import numpy as np
import pytest

from src.bcgan.config import PhantomConfig
from src.bcgan.phantom import generate_subject, lesion_intensity_pair, normalize_slice, table_oracle
from src.presets.presets import CLASS_INTENSITY_TABLE


def _config(**overrides) -> PhantomConfig:
    return PhantomConfig(class_intensity_table=CLASS_INTENSITY_TABLE, **overrides)


def test_same_seed_is_bitwise_identical(phantom_config):
    first = generate_subject(17, phantom_config)
    second = generate_subject(17, phantom_config)
    for field in ("contrast_a", "contrast_b", "labels", "lesion_mask"):
        np.testing.assert_array_equal(getattr(first, field), getattr(second, field))


def test_different_seeds_differ(phantom_config):
    assert not np.array_equal(generate_subject(1, phantom_config).contrast_a,
                              generate_subject(2, phantom_config).contrast_a)


def test_shapes_ranges_and_background():
    pair = generate_subject(3, _config())
    assert pair.contrast_a.shape == pair.contrast_b.shape == pair.labels.shape == pair.lesion_mask.shape
    assert pair.contrast_a.dtype == np.float32
    for volume in (pair.contrast_a, pair.contrast_b):
        assert volume.min() >= 0.0 and volume.max() <= 1.0
        assert np.all(volume[~pair.foreground] == 0.0)
    assert set(np.unique(pair.labels)) <= {0, 1, 2, 3, 4}


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_foreground_fraction(seed):
    fraction = generate_subject(seed, _config()).foreground.mean()
    assert 0.2 <= fraction <= 0.6


def test_clean_phantom_follows_class_table():
    cfg = _config(noise_sigma=0.0, bias_field_amplitude=0.0, lesion_probability=0.0)
    pair = generate_subject(8, cfg)
    assert not pair.has_lesion
    np.testing.assert_array_equal(pair.contrast_b, table_oracle(pair, cfg))


def test_lesion_lies_inside_head_and_off_table():
    cfg = _config(lesion_probability=1.0)
    pair = generate_subject(5, cfg)
    assert pair.has_lesion
    assert np.all(pair.labels[pair.lesion_mask] > 0)
    lesion = lesion_intensity_pair(cfg)
    assert all(tuple(row) != lesion for row in cfg.class_intensity_table)


def test_table_oracle_is_worse_on_lesions():
    cfg = _config(lesion_probability=1.0)
    pair = generate_subject(5, cfg)
    squared = (table_oracle(pair, cfg).astype(np.float64) - pair.contrast_b) ** 2
    healthy = pair.foreground & ~pair.lesion_mask
    assert np.sqrt(squared[pair.lesion_mask].mean()) > np.sqrt(squared[healthy].mean())


def test_lesion_without_contrast_flip_follows_trend():
    cfg = _config(lesion_contrast_flip=False)
    lesion_a, lesion_b = lesion_intensity_pair(cfg)
    assert lesion_a == pytest.approx(0.62)
    assert lesion_b == pytest.approx(0.58)


def test_no_lesions_when_probability_zero():
    cfg = _config(lesion_probability=0.0)
    assert not any(generate_subject(seed, cfg).has_lesion for seed in range(5))


class TestNormalizeSlice:
    def test_min_max(self):
        np.testing.assert_allclose(normalize_slice(np.array([[2.0, 4.0, 6.0]])), [[0.0, 0.5, 1.0]])

    def test_unit_range_unchanged(self):
        image = np.array([[0.0, 0.25], [0.75, 1.0]], dtype=np.float32)
        np.testing.assert_array_equal(normalize_slice(image), image)

    def test_constant_slice(self):
        out = normalize_slice(np.full((4, 4), 0.3))
        assert out.dtype == np.float32
        assert np.all(out == 0.0)
