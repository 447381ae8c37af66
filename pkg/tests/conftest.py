"""
Shared fixtures: tiny network layouts, configs and phantoms
"""

import json

import numpy as np
import pytest

from src.bcgan.config import DiscriminatorSpec, GeneratorSpec, PhantomConfig, TrainConfig, build_run_config
from src.presets.presets import CLASS_INTENSITY_TABLE

TINY_DOCUMENT = {
    "preset": "desk",
    "seed": 3,
    "phantom": {"volume_shape": [32, 32, 4]},
    "generator": {"levels": 2, "base_channels": 4, "dropout_positions": [1, 2]},
    "discriminator": {"base_channels": 4},
    "train": {"batch_size": 4, "epochs": 1, "resize_to": 34},
    "posterior": {"num_passes": 2, "batch_slices": 4},
    "calibration": {"grid_size": 10},
    "data": {"num_subjects": 4, "split_ratios": [0.5, 0.5]},
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_document():
    return json.loads(json.dumps(TINY_DOCUMENT))


@pytest.fixture
def tiny_config(tiny_document, tmp_path):
    tiny_document["paths"] = {
        "data_dir": str(tmp_path / "data"),
        "train_dir": str(tmp_path / "train"),
        "predict_dir": str(tmp_path / "predict"),
        "calibrate_dir": str(tmp_path / "calibrate"),
        "evaluate_dir": str(tmp_path / "evaluate"),
    }
    return build_run_config(tiny_document)


@pytest.fixture
def tiny_generator_spec():
    return GeneratorSpec(input_size=32, levels=2, base_channels=4, dropout_positions=[1, 2])


@pytest.fixture
def tiny_discriminator_spec():
    return DiscriminatorSpec(base_channels=4)


@pytest.fixture
def train_config():
    return TrainConfig(batch_size=4, epochs=1, resize_to=34, crop_to=32, seed=5)


@pytest.fixture
def phantom_config():
    return PhantomConfig(volume_shape=(32, 32, 8), class_intensity_table=CLASS_INTENSITY_TABLE)
