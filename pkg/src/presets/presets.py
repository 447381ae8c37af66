"""
Preset run configurations ("desk" for CPU runs, "full" for the 256-voxel setup)
"""

from typing import Any, Dict, List

# Per-class (mean_A, mean_B) tissue intensities; A -> B is injective and inverts contrast
CLASS_INTENSITY_TABLE: List[List[float]] = [
    [0.25, 0.95],
    [0.50, 0.70],
    [0.75, 0.45],
    [0.95, 0.30],
]

# Lesion pair lies off the table map in both contrasts
LESION_INTENSITY: List[float] = [0.62, 0.90]

# Recall fractions 1.0, 0.95, ..., 0.05
RECALL_GRID: List[float] = [round(1.0 - 0.05 * i, 2) for i in range(20)]

DESK_PRESET: Dict[str, Any] = {
    "phantom": {
        "volume_shape": [32, 32, 32],
        "num_classes": 4,
        "class_intensity_table": CLASS_INTENSITY_TABLE,
        "lesion_intensity": LESION_INTENSITY,
        "noise_sigma": 0.02,
        "bias_field_amplitude": 0.1,
        "lesion_probability": 0.5,
        "lesion_contrast_flip": True,
    },
    "generator": {
        "input_size": 32,
        "levels": 4,
        "base_channels": 16,
        "dropout_kind": "concrete",
        "dropout_positions": [2, 3, 4],
        "mc_rate": 0.5,
        "initial_p": 0.1,
        "per_element": False,
    },
    "discriminator": {
        "conv_layers": 5,
        "base_channels": 16,
    },
    "train": {
        "learning_rate": 2e-4,
        "beta1": 0.5,
        "beta2": 0.999,
        "adam_epsilon": 1e-8,
        "batch_size": 8,
        "epochs": 20,
        "lambda_l1": 100.0,
        "lambda_kl": 100.0,
        "temperature": 0.1,
        "c_w": 1e-6,
        "c_d": 1e-5,
        "resize_to": 36,
        "crop_to": 32,
    },
    "posterior": {
        "num_passes": 50,
        "batch_slices": 8,
    },
    "calibration": {
        "grid_size": 100,
        "sigma_floor": 1e-6,
        "use_held_out": False,
    },
    "evaluation": {
        "recalls": RECALL_GRID,
        "interval_level": 0.95,
    },
    "data": {
        "num_subjects": 40,
        "split_ratios": [0.8, 0.2],
    },
    "seed": 0,
}

FULL_PRESET: Dict[str, Any] = {
    "phantom": {"volume_shape": [256, 256, 256]},
    "generator": {"input_size": 256, "levels": 8, "base_channels": 64},
    "discriminator": {"base_channels": 64},
    "train": {"batch_size": 16, "epochs": 40, "resize_to": 286, "crop_to": 256},
    "data": {"num_subjects": 102},
}

# "full" overrides are applied on top of "desk"
PRESETS: Dict[str, List[Dict[str, Any]]] = {
    "desk": [DESK_PRESET],
    "full": [DESK_PRESET, FULL_PRESET],
}
