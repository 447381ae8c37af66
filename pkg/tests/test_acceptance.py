"""
Desk-scale end-to-end runs

Selected with `pytest -m slow`; each takes minutes to an hour on a 4-core CPU.
"""

import math
import os

import numpy as np
import pytest

from src.bcgan.checkpoint import load_checkpoint
from src.bcgan.config import build_run_config
from src.bcgan.evaluation import paired_ttest
from src.bcgan.pipeline import (CHECKPOINT_DIR, run_calibration, run_evaluation, run_gen_data, run_prediction,
                                run_training)

pytestmark = pytest.mark.slow


def _desk_config(directory, **document):
    document.setdefault("preset", "desk")
    document["paths"] = {name: str(directory / name.replace("_dir", "")) for name in
                         ("data_dir", "train_dir", "predict_dir", "calibrate_dir", "evaluate_dir")}
    return build_run_config(document)


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    """40 subjects, 20 epochs of concrete dropout, 50 passes, map fitted on the training split"""
    directory = tmp_path_factory.mktemp("desk")
    config = _desk_config(directory)
    paths = config.paths
    run_gen_data(config, paths.data_dir)
    training = run_training(config, paths.data_dir, paths.train_dir)
    train_pred = os.path.join(paths.predict_dir, "train")
    test_pred = os.path.join(paths.predict_dir, "test")
    run_prediction(config, paths.data_dir, paths.train_dir, train_pred, split="train")
    run_prediction(config, paths.data_dir, paths.train_dir, test_pred, split="test")
    run_calibration(config, train_pred, paths.data_dir, paths.calibrate_dir)
    evaluation = run_evaluation(config, test_pred, paths.data_dir, paths.evaluate_dir,
                                map_path=os.path.join(paths.calibrate_dir, "calibration_map.csv"))
    return training, evaluation.output.report


def test_l1_term_halves_over_training(desk_run):
    training, _ = desk_run
    history = training.history
    assert len(history) == 20
    assert history["g_l1"].iloc[-1] <= 0.5 * history["g_l1"].iloc[0]
    probabilities = history[[column for column in history.columns if column.startswith("p_")]].to_numpy()
    assert np.all((probabilities > 0) & (probabilities < 1))


def test_synthesis_beats_identity_baseline(desk_run):
    _, report = desk_run
    assert len(report.subjects) == 8
    assert np.mean(report.nrmse_volume) < 0.5 * np.mean(report.identity_nrmse_volume)


def test_uncertainty_is_higher_on_lesions(desk_run):
    _, report = desk_run
    assert report.lesion_std_mean is not None
    assert report.lesion_std_mean > report.nonlesion_std_mean


def test_recalibration_does_not_hurt(desk_run):
    _, report = desk_run
    assert report.calibration_rms_recalibrated <= report.calibration_rms
    assert report.calibration_rms_recalibrated < 0.1


def test_sparsification_mostly_decreases(desk_run):
    _, report = desk_run
    recall = report.sparsification["recall"]
    rmse = np.asarray(report.sparsification["rmse"])
    full = rmse[recall.index(1.0)]
    assert rmse[recall.index(0.5)] < full
    steps = np.diff(rmse)
    violations = steps[steps > 0]
    assert violations.size <= 0.2 * steps.size
    assert np.all(violations < 0.05 * full)


def test_training_is_repeatable(tmp_path):
    first = _desk_config(tmp_path / "a", train={"epochs": 2})
    second = _desk_config(tmp_path / "b", train={"epochs": 2})
    for config in (first, second):
        run_gen_data(config, config.paths.data_dir)
        run_training(config, config.paths.data_dir, config.paths.train_dir)
    epoch = os.path.join(CHECKPOINT_DIR, "epoch_002", "generator.bcgw")
    a = load_checkpoint(os.path.join(first.paths.train_dir, epoch))
    b = load_checkpoint(os.path.join(second.paths.train_dir, epoch))
    assert list(a) == list(b)
    for name in a:
        np.testing.assert_allclose(a[name], b[name], rtol=0, atol=1e-5)


def test_concrete_matches_or_beats_monte_carlo(tmp_path):
    concrete, monte_carlo = [], []
    for seed in range(5):
        config = _desk_config(tmp_path / f"seed{seed}", seed=seed)
        paths = config.paths
        run_gen_data(config, paths.data_dir)
        for kind, sink in (("concrete", concrete), ("monte_carlo", monte_carlo)):
            config.generator.dropout_kind = kind
            train_dir = os.path.join(paths.train_dir, kind)
            pred_dir = os.path.join(paths.predict_dir, kind)
            run_training(config, paths.data_dir, train_dir)
            run_prediction(config, paths.data_dir, train_dir, pred_dir)
            report = run_evaluation(config, pred_dir, paths.data_dir, os.path.join(paths.evaluate_dir, kind))
            sink.extend(report.output.report.rmse)

    assert np.mean(concrete) <= np.mean(monte_carlo)
    result = paired_ttest(concrete, monte_carlo)
    assert result.df == len(concrete) - 1
    assert math.isfinite(result.p)
