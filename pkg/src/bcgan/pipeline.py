"""
Pipeline stages
Data generation, training, dropout testing, calibration and evaluation wired to on-disk artifacts
"""

import json
import logging
import os
import shutil
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from src.bcgan.config import RunConfig, build_run_config, save_run_config
from src.bcgan.dataset import (Manifest, SliceDataset, generate_dataset, load_split, load_subject,
                               normalized_volume, read_manifest)
from src.bcgan.errors import CalibrationError, CheckpointError, DatasetError, OutputExistsError, PosteriorError
from src.bcgan.evaluation import (EvaluationOutput, SubjectPrediction, build_metric_report,
                                  compare_reports, pooled_posterior)
from src.bcgan.log import LOG_FILE_NAME
from src.bcgan.plots import plot_boxplot, write_evaluation_plots
from src.bcgan.posterior import SIDECAR_NAME, BYTE_SCALE, load_posterior, mc_predict, rescale_to_byte, save_posterior
from src.bcgan.recalibration import (CalibrationMap, fit_calibration, load_calibration_map,
                                     save_calibration_map)
from src.bcgan.reporter import write_report
from src.bcgan.rvol import write_rvol
from src.bcgan.training import TrainingResult, latest_checkpoint, load_generator, train

logger = logging.getLogger(__name__)

CONFIG_NAME = "config.json"
HISTORY_NAME = "loss_history.csv"
CHECKPOINT_DIR = "checkpoints"
MAP_NAME = "calibration_map.csv"
REPORT_NAME = "report.json"


def prepare_output_dir(path: str, force: bool = False) -> str:
    """
    Create an output directory that must not already hold results

    The run log file is ignored and kept.

    Raises:
        OutputExistsError: path is a non-empty directory and force is False
    """
    entries = [name for name in os.listdir(path) if name != LOG_FILE_NAME] if os.path.isdir(path) else []
    if entries:
        if not force:
            raise OutputExistsError(f"{path} already exists and is not empty (use --force to overwrite)")
        logger.warning("overwriting %s", path)
        for name in entries:
            target = os.path.join(path, name)
            if os.path.isdir(target):
                shutil.rmtree(target)
            else:
                os.remove(target)
    os.makedirs(path, exist_ok=True)
    return path


def calibration_split(config: RunConfig) -> str:
    return "calibration" if config.calibration.use_held_out else "train"


# ---------------------------------------------------------------- gen-data

def run_gen_data(config: RunConfig, out_dir: str, force: bool = False,
                 progress: Optional[Callable[[], None]] = None) -> Manifest:
    prepare_output_dir(out_dir, force)
    save_run_config(config, os.path.join(out_dir, CONFIG_NAME))
    return generate_dataset(config, out_dir, progress=progress)


# ---------------------------------------------------------------- train

def run_training(config: RunConfig, data_dir: str, out_dir: str, resume: bool = False, force: bool = False,
                 on_epoch: Optional[Callable[[int, Dict[str, float]], None]] = None,
                 on_batch: Optional[Callable[[], None]] = None) -> TrainingResult:
    """
    Train on the training split and write checkpoints, the loss history and the config used

    With resume the output directory is reused and training continues from its
    latest epoch checkpoint.
    """
    if resume:
        if not os.path.isdir(out_dir):
            raise CheckpointError(f"nothing to resume in {out_dir}")
        config = _resumed_config(config, out_dir)
    else:
        prepare_output_dir(out_dir, force)
    manifest = read_manifest(data_dir)
    pairs = load_split(data_dir, "train", manifest)
    if not pairs:
        raise DatasetError(f"training split of {data_dir} is empty")
    dataset = SliceDataset.from_subjects(pairs)
    logger.info("training on %d subjects, %d slices (%s dropout)", len(pairs), len(dataset),
                config.generator.dropout_kind)

    save_run_config(config, os.path.join(out_dir, CONFIG_NAME))
    result = train(dataset, config.generator, config.discriminator, config.train,
                   checkpoint_dir=os.path.join(out_dir, CHECKPOINT_DIR), resume=resume,
                   on_epoch=on_epoch, on_batch=on_batch)
    result.history.to_csv(os.path.join(out_dir, HISTORY_NAME), index=False, float_format="%.10g",
                          lineterminator="\n")
    return result


def _resumed_config(config: RunConfig, out_dir: str) -> RunConfig:
    """The saved training config, with the epoch count of the current one"""
    saved = load_training_config(out_dir)
    if saved.model_dump(exclude={"train": {"epochs"}}) != config.model_dump(exclude={"train": {"epochs"}}):
        logger.warning("config differs from the one saved in %s; resuming with the saved config", out_dir)
    document = saved.model_dump()
    document["train"]["epochs"] = config.train.epochs
    return build_run_config(document)


def load_training_config(train_dir: str) -> RunConfig:
    path = os.path.join(train_dir, CONFIG_NAME)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return build_run_config(json.load(f))
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read training config {path}: {exc}") from exc


# ---------------------------------------------------------------- predict

def resolve_checkpoint(train_dir: str, checkpoint: Optional[str] = None) -> str:
    if checkpoint is not None:
        if not os.path.exists(checkpoint):
            raise CheckpointError(f"checkpoint {checkpoint} does not exist")
        return checkpoint
    latest = latest_checkpoint(os.path.join(train_dir, CHECKPOINT_DIR))
    if latest is None:
        raise CheckpointError(f"no checkpoint found under {train_dir}")
    return latest


def byte_truth(volume: np.ndarray) -> np.ndarray:
    """Target volume on the scale the byte-rescaled posterior lives on"""
    return normalized_volume(volume).astype(np.float64) * BYTE_SCALE


def run_prediction(config: RunConfig, data_dir: str, train_dir: str, out_dir: str, split: str = "test",
                   checkpoint: Optional[str] = None, num_passes: Optional[int] = None, force: bool = False,
                   progress: Optional[Callable[[int], None]] = None,
                   subjects: Optional[Sequence[str]] = None) -> List[str]:
    """
    Dropout testing over every subject of a split, or over the named subjects

    The generator layout comes from the config saved with the training run.
    Each subject gets <out_dir>/<subject_id>/ with byte-scale mean, std and mask
    volumes, the sidecar, and the absolute-error volume against contrast B.
    Named subjects may come from any split; each must be in the manifest.
    The foreground mask comes from the tissue labels.

    Returns:
        Subject directories written
    """
    passes = config.posterior.num_passes if num_passes is None else num_passes
    if passes < 2:
        raise PosteriorError(f"dropout testing needs at least 2 passes, got {passes}")
    trained = load_training_config(train_dir)
    path = resolve_checkpoint(train_dir, checkpoint)
    generator = load_generator(path, trained.generator, trained.train)
    manifest = read_manifest(data_dir)
    if subjects:
        subject_ids = [manifest.entry(subject_id).subject_id for subject_id in dict.fromkeys(subjects)]
    else:
        subject_ids = manifest.split(split)
        if not subject_ids:
            raise DatasetError(f"split '{split}' of {data_dir} is empty")

    prepare_output_dir(out_dir, force)
    logger.info("dropout testing %d subjects of %s with %d passes from %s", len(subject_ids),
                "the named subjects" if subjects else f"'{split}'", passes, path)
    written = []
    for subject_id in subject_ids:
        pair = load_subject(data_dir, manifest.entry(subject_id))
        posterior = mc_predict(generator, pair.contrast_a, passes, config.seed, mask=pair.foreground,
                               batch_slices=config.posterior.batch_slices, progress=progress)
        posterior = rescale_to_byte(posterior)
        directory = os.path.join(out_dir, subject_id)
        save_posterior(posterior, directory, subject_id=subject_id)
        error = np.abs(posterior.mean.astype(np.float64) - byte_truth(pair.contrast_b))
        write_rvol(np.where(posterior.foreground_mask, error, 0.0), os.path.join(directory, "error.rvol"))
        written.append(directory)
    return written


# ---------------------------------------------------------------- shared loading

def find_predictions(pred_dir: str) -> Dict[str, str]:
    """Subject prediction directories below pred_dir, keyed by their relative path"""
    if not os.path.isdir(pred_dir):
        raise PosteriorError(f"prediction directory {pred_dir} does not exist")
    found = {}
    for root, dirs, files in os.walk(pred_dir):
        dirs.sort()
        if SIDECAR_NAME in files:
            found[os.path.relpath(root, pred_dir).replace(os.sep, "/")] = root
    return dict(sorted(found.items()))


def load_predictions(pred_dir: str, data_dir: str,
                     manifest: Optional[Manifest] = None) -> List[SubjectPrediction]:
    """Byte-scale posteriors of a prediction directory with their truths, in manifest order"""
    manifest = manifest if manifest is not None else read_manifest(data_dir)
    order = {entry.subject_id: i for i, entry in enumerate(manifest.subjects)}
    subjects = []
    for key, directory in find_predictions(pred_dir).items():
        with open(os.path.join(directory, SIDECAR_NAME), "r", encoding="utf-8") as f:
            subject_id = json.load(f).get("subject_id") or os.path.basename(directory)
        entry = manifest.entry(subject_id)
        posterior = load_posterior(directory)
        if posterior.scale_domain != "byte":
            posterior = rescale_to_byte(posterior)
        pair = load_subject(data_dir, entry)
        subjects.append((order[subject_id], key, SubjectPrediction(
            subject_id=key if key != "." else subject_id,
            posterior=posterior,
            truth=byte_truth(pair.contrast_b),
            source=byte_truth(pair.contrast_a),
            lesion_mask=pair.lesion_mask,
        )))
    subjects.sort(key=lambda item: (item[0], item[1]))
    return [subject for _, _, subject in subjects]


# ---------------------------------------------------------------- calibrate

def run_calibration(config: RunConfig, pred_dir: str, data_dir: str, out_dir: str,
                    force: bool = False) -> CalibrationMap:
    """Fit the recalibration map on the posteriors of a calibration split and write it as CSV"""
    subjects = load_predictions(pred_dir, data_dir)
    if not subjects:
        raise CalibrationError(f"no posteriors found in {pred_dir}")
    posterior, truths = pooled_posterior(subjects)
    calibration_map = fit_calibration(posterior, truths, config.calibration.grid_size,
                                      config.calibration.sigma_floor)
    prepare_output_dir(out_dir, force)
    save_calibration_map(calibration_map, os.path.join(out_dir, MAP_NAME))
    logger.info("calibration map fitted on %d voxels of %d subjects", calibration_map.calibration_set_size,
                len(subjects))
    return calibration_map


# ---------------------------------------------------------------- evaluate

@dataclass
class EvaluationRun:
    output: EvaluationOutput
    comparison: Optional[EvaluationOutput] = None


def _evaluate(config: RunConfig, subjects: Sequence[SubjectPrediction],
              calibration_map: Optional[CalibrationMap]) -> EvaluationOutput:
    return build_metric_report(subjects, config.evaluation.recalls, config.calibration.grid_size,
                               config.calibration.sigma_floor, config.evaluation.interval_level,
                               calibration_map)


def run_evaluation(config: RunConfig, pred_dir: str, data_dir: str, out_dir: str,
                   map_path: Optional[str] = None, compare_dir: Optional[str] = None,
                   force: bool = False) -> EvaluationRun:
    """
    Metric report, curve CSVs and SVG plots of a prediction directory

    Args:
        config: Run configuration (evaluation and calibration sections)
        pred_dir: Predictions to evaluate
        data_dir: Dataset holding the truths
        out_dir: Report directory
        map_path: Calibration map; adds the recalibrated curves and metrics
        compare_dir: Second prediction set; per-subject RMSE of both sets goes through a paired t-test

    Returns:
        EvaluationRun with the main output and, when comparing, the second one
    """
    manifest = read_manifest(data_dir)
    calibration_map = load_calibration_map(map_path) if map_path else None
    subjects = load_predictions(pred_dir, data_dir, manifest)
    output = _evaluate(config, subjects, calibration_map)
    prepare_output_dir(out_dir, force)

    comparison = None
    rmse_samples = {_label(pred_dir): output.report.rmse}
    if compare_dir is not None:
        comparison = _evaluate(config, load_predictions(compare_dir, data_dir, manifest), calibration_map)
        output.report.ttest = compare_reports(output.report, comparison.report, _label(pred_dir),
                                              _label(compare_dir))
        rmse_samples[_label(compare_dir)] = comparison.report.rmse
        write_report(comparison.report, os.path.join(out_dir, "report_compare.json"))
        logger.info("paired t-test %s vs %s: t=%.3f, p=%.4g", _label(pred_dir), _label(compare_dir),
                    output.report.ttest["t"], output.report.ttest["p"])

    write_report(output.report, os.path.join(out_dir, REPORT_NAME))
    write_evaluation_plots(output.curves, output.scatter, out_dir)
    plot_boxplot(rmse_samples, os.path.join(out_dir, "rmse_boxplot.svg"))
    return EvaluationRun(output, comparison)


def _label(path: str) -> str:
    return os.path.basename(os.path.normpath(path))
