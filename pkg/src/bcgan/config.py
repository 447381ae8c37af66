"""
Run configuration
Schema-validated models for every stage, preset merging and JSON loading
"""

import copy
import json
import logging
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.bcgan.errors import ConfigError
from src.presets.presets import PRESETS, RECALL_GRID

logger = logging.getLogger(__name__)

# smallest square input the 5-layer discriminator maps to a non-empty logit map
MIN_DISCRIMINATOR_INPUT = 24


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PhantomConfig(_Section):
    """Synthetic paired-contrast phantom settings"""

    volume_shape: Tuple[int, int, int] = (32, 32, 32)
    num_classes: int = Field(4, ge=1)
    class_intensity_table: List[Tuple[float, float]]
    lesion_intensity: Tuple[float, float] = (0.62, 0.90)
    noise_sigma: float = Field(0.02, ge=0.0)
    bias_field_amplitude: float = Field(0.1, ge=0.0, lt=1.0)
    lesion_probability: float = Field(0.5, ge=0.0, le=1.0)
    lesion_contrast_flip: bool = True
    head_radii: Tuple[float, float, float] = (0.85, 0.80, 0.90)
    shape_jitter: float = Field(0.05, ge=0.0, lt=0.5)

    @field_validator("volume_shape")
    @classmethod
    def _positive_shape(cls, value):
        if min(value) < 4:
            raise ValueError(f"volume extents must be at least 4, got {value}")
        return value

    @model_validator(mode="after")
    def _check_table(self):
        table = self.class_intensity_table
        if len(table) != self.num_classes:
            raise ValueError(f"class_intensity_table has {len(table)} rows for {self.num_classes} classes")
        for mean_a, mean_b in [*table, self.lesion_intensity]:
            if not (0.0 < mean_a < 1.0 and 0.0 < mean_b < 1.0):
                raise ValueError("class and lesion intensities must lie in (0, 1)")
        # the A -> B map must be a function that a predictor can invert per class
        if len({a for a, _ in table}) != len(table) or len({b for _, b in table}) != len(table):
            raise ValueError("class_intensity_table must map contrast A to contrast B injectively")
        if any(abs(self.lesion_intensity[0] - a) < 1e-6 for a, _ in table):
            raise ValueError("lesion contrast-A intensity must differ from every tissue class")
        return self


class GeneratorSpec(_Section):
    """UNet-like generator layout and dropout placement"""

    input_size: int = Field(32, ge=2)
    levels: int = Field(4, ge=1)
    base_channels: int = Field(16, ge=1)
    dropout_kind: Literal["concrete", "monte_carlo", "none"] = "concrete"
    dropout_positions: List[int] = [2, 3, 4]
    mc_rate: float = Field(0.5, ge=0.0, lt=1.0)
    initial_p: float = Field(0.1, gt=0.0, lt=1.0)
    per_element: bool = False

    @model_validator(mode="after")
    def _check_layout(self):
        if self.input_size % (2 ** self.levels) != 0:
            raise ValueError(f"input_size {self.input_size} is not divisible by 2^{self.levels}")
        positions = self.dropout_positions
        if len(set(positions)) != len(positions):
            raise ValueError(f"duplicate dropout positions {positions}")
        if any(not 1 <= j <= self.levels for j in positions):
            raise ValueError(f"dropout_positions {positions} must lie in 1..{self.levels}")
        return self


class DiscriminatorSpec(_Section):
    """Five-layer convolutional patch discriminator on a concatenated (source, target) pair"""

    conv_layers: Literal[5] = 5
    base_channels: int = Field(16, ge=1)
    input_channels: Literal[2] = 2


class TrainConfig(_Section):
    """Optimizer, loss weights and augmentation"""

    learning_rate: float = Field(2e-4, gt=0.0)
    beta1: float = Field(0.5, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_epsilon: float = Field(1e-8, gt=0.0)
    batch_size: int = Field(8, ge=1)
    epochs: int = Field(20, ge=1)
    lambda_l1: float = Field(100.0, ge=0.0)
    lambda_kl: float = Field(100.0, ge=0.0)
    temperature: float = Field(0.1, gt=0.0)
    c_w: float = Field(1e-6, ge=0.0)
    c_d: float = Field(1e-5, ge=0.0)
    resize_to: int = Field(36, ge=1)
    crop_to: int = Field(32, ge=1)
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _check_crop(self):
        if self.resize_to <= self.crop_to:
            raise ValueError(f"resize_to ({self.resize_to}) must exceed crop_to ({self.crop_to})")
        return self


class PosteriorConfig(_Section):
    """Dropout-testing settings"""

    num_passes: int = Field(50, ge=2)
    batch_slices: int = Field(8, ge=1)


class CalibrationConfig(_Section):
    grid_size: int = Field(100, ge=1)
    sigma_floor: float = Field(1e-6, gt=0.0)
    use_held_out: bool = False


class EvaluationConfig(_Section):
    recalls: List[float] = Field(default_factory=lambda: list(RECALL_GRID))
    interval_level: float = Field(0.95, gt=0.0, lt=1.0)

    @field_validator("recalls")
    @classmethod
    def _check_recalls(cls, value):
        if not value:
            raise ValueError("recall grid is empty")
        if any(not 0.0 < r <= 1.0 for r in value):
            raise ValueError("recalls must lie in (0, 1]")
        if any(b >= a for a, b in zip(value, value[1:])):
            raise ValueError("recalls must be strictly descending")
        return value


class DataConfig(_Section):
    """Subject count and split ratios: [train, test] or [train, calibration, test]"""

    num_subjects: int = Field(40, ge=2)
    split_ratios: List[float] = [0.8, 0.2]

    @field_validator("split_ratios")
    @classmethod
    def _check_ratios(cls, value):
        if len(value) not in (2, 3):
            raise ValueError("split_ratios takes two (train, test) or three (train, calibration, test) entries")
        if any(r <= 0 for r in value):
            raise ValueError("split ratios must be positive")
        if abs(sum(value) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {sum(value)}")
        return value


class PathsConfig(_Section):
    data_dir: str = "runs/data"
    train_dir: str = "runs/train"
    predict_dir: str = "runs/predict"
    calibrate_dir: str = "runs/calibrate"
    evaluate_dir: str = "runs/evaluate"


class RunConfig(_Section):
    """Complete configuration of one pipeline run"""

    preset: Optional[str] = None
    phantom: PhantomConfig
    generator: GeneratorSpec = Field(default_factory=GeneratorSpec)
    discriminator: DiscriminatorSpec = Field(default_factory=DiscriminatorSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    posterior: PosteriorConfig = Field(default_factory=PosteriorConfig)
    calibration: CalibrationConfig = Field(default_factory=CalibrationConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    seed: int = 0

    @model_validator(mode="after")
    def _cross_check(self):
        size = self.generator.input_size
        x_extent, y_extent, _ = self.phantom.volume_shape
        if (x_extent, y_extent) != (size, size):
            raise ValueError(f"phantom slices are {x_extent}x{y_extent} but generator.input_size is {size}")
        if self.train.crop_to != size:
            raise ValueError(f"train.crop_to ({self.train.crop_to}) must equal generator.input_size ({size})")
        if size < MIN_DISCRIMINATOR_INPUT:
            raise ValueError(f"input_size {size} is below the discriminator minimum {MIN_DISCRIMINATOR_INPUT}")
        if self.calibration.use_held_out and len(self.data.split_ratios) != 3:
            raise ValueError("calibration.use_held_out needs three split_ratios (train, calibration, test)")
        if self.train.seed is None:
            self.train.seed = self.seed
        return self


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Recursively merge override into a copy of base

    Nested dicts merge key by key; any other value in override replaces the base value.
    """
    merged = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def build_run_config(document: Mapping[str, Any]) -> RunConfig:
    """
    Validate a config document, expanding its preset first

    Args:
        document: Parsed JSON; may name "preset": "desk" | "full" and override any field

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: Unknown preset, unknown keys or violated invariants
    """
    preset = document.get("preset")
    merged: Dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}' (choose from {', '.join(sorted(PRESETS))})")
        for layer in PRESETS[preset]:
            merged = deep_merge(merged, layer)
    merged = deep_merge(merged, document)
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(_format_validation_error(exc)) from exc


def load_run_config(path: Optional[str] = None, preset: Optional[str] = None) -> RunConfig:
    """
    Load a RunConfig from a JSON file, a preset name, or both (file overrides preset)

    Raises:
        ConfigError: Missing or malformed file, or invalid content
    """
    document: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                document = json.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(document, dict):
            raise ConfigError(f"{path} must hold a JSON object")
    if preset is not None:
        document = {**document, "preset": preset}
    if path is None and "preset" not in document:
        document["preset"] = "desk"
    config = build_run_config(document)
    logger.debug("loaded config (preset=%s, seed=%d)", config.preset, config.seed)
    return config


def save_run_config(config: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(config.model_dump_json(indent=2))
        f.write("\n")


def _format_validation_error(exc: ValidationError) -> str:
    lines = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        lines.append(f"{location}: {error['msg']}")
    return "invalid configuration: " + "; ".join(lines)
