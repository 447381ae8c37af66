"""
Tests for report formatting and plot output
"""

import json
import os

import numpy as np
import pytest

from src.bcgan.evaluation import CurveSeries, build_metric_report
from src.bcgan.plots import plot_boxplot, write_curve_csv, write_evaluation_plots
from src.bcgan.recalibration import CalibrationMap
from src.bcgan.reporter import Reporter, read_report, write_report
from tests.factories import make_subject


@pytest.fixture
def output(rng):
    subjects = [make_subject(rng, f"subject_{i:03d}") for i in range(3)]
    return build_metric_report(subjects, [1.0, 0.5, 0.25], grid_size=10,
                               calibration_map=CalibrationMap.identity(10))


def test_console_sections(output):
    text = Reporter().format_console(output.report)
    assert "📊 Evaluation Results" in text
    assert "subject_002" in text
    assert "🎯 Calibration" in text
    assert "Recalibrated RMS" in text
    assert "⚖️" not in text
    assert "Summary:" in text


def test_console_shows_ttest(output):
    output.report.ttest = {"a": "concrete", "b": "monte_carlo", "t": -2.5, "df": 3, "p": 0.0877}
    text = Reporter().format_console(output.report)
    assert "concrete vs monte_carlo: t = -2.500, df = 3" in text


def test_clamp_warning(output):
    output.report.clamped_voxels = 7
    assert "7 mean voxels were clamped" in Reporter().format_console(output.report)


def test_json_round_trip(output, tmp_path):
    parsed = json.loads(Reporter().format_json(output.report))
    assert parsed["subjects"] == output.report.subjects
    assert parsed["calibration_rms"] == pytest.approx(output.report.calibration_rms)
    path = str(tmp_path / "report.json")
    write_report(output.report, path)
    assert read_report(path) == parsed


def test_summary(output):
    summary = Reporter().format_summary(output.report)
    assert summary.startswith("Summary:")
    assert "Subjects: 3" in summary


def test_evaluation_plots(output, tmp_path):
    write_evaluation_plots(output.curves, output.scatter, str(tmp_path))
    expected = ["sparsification.csv", "sparsification.svg", "calibration.csv", "calibration.svg",
                "calibration_recalibrated.csv"]
    expected += [f"error_uncertainty_{level}.{ext}" for level in ("voxel", "slice", "volume") for ext in ("csv", "svg")]
    for name in expected:
        assert os.path.isfile(tmp_path / name), name
    with open(tmp_path / "calibration.svg", "r", encoding="utf-8") as f:
        assert f.read().lstrip().startswith("<?xml")


def test_svg_output_is_reproducible(tmp_path):
    plot_boxplot({"a": [1.0, 2.0, 3.0, 9.0], "b": [2.0, 2.5, 3.0]}, str(tmp_path / "one.svg"))
    plot_boxplot({"a": [1.0, 2.0, 3.0, 9.0], "b": [2.0, 2.5, 3.0]}, str(tmp_path / "two.svg"))
    assert (tmp_path / "one.svg").read_bytes() == (tmp_path / "two.svg").read_bytes()


def test_curve_csv(tmp_path):
    curve = CurveSeries("sparsification", np.array([1.0, 0.5]), np.array([2.5, 1.25]), "recall", "rmse")
    path = tmp_path / "curve.csv"
    write_curve_csv(curve, str(path))
    assert path.read_text().splitlines() == ["recall,rmse", "1,2.5", "0.5,1.25"]
