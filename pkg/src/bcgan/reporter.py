"""
Reporting module
Formats and outputs evaluation results
"""

import json
from typing import Dict, Optional

import numpy as np

from src.bcgan.evaluation import MetricReport


def _fmt(value: Optional[float], digits: int = 4) -> str:
    if value is None:
        return "n/a"
    return f"{value:.{digits}f}"


class Reporter:
    """Handles formatting and output of metric reports"""

    def format_console(self, report: MetricReport) -> str:
        """
        Format a report for console output

        Args:
            report: Metric report of one evaluation run

        Returns:
            Formatted string
        """
        output = []
        output.append("\n📊 Evaluation Results\n")
        output.append("=" * 70 + "\n")

        output.append(f"\n🧠 Subjects ({len(report.subjects)})\n")
        output.append("-" * 70 + "\n")
        output.append(f"  {'subject':<16}{'RMSE':>10}{'nRMSE':>10}{'nSTD':>10}{'identity':>10}\n")
        for i, subject_id in enumerate(report.subjects):
            output.append(f"  {subject_id:<16}{report.rmse[i]:>10.3f}{report.nrmse_volume[i]:>10.4f}"
                          f"{report.nstd_volume[i]:>10.3f}{report.identity_nrmse_volume[i]:>10.4f}\n")

        output.append("\n🎯 Calibration\n")
        output.append("-" * 70 + "\n")
        output.append(f"  RMS vs diagonal: {_fmt(report.calibration_rms)}\n")
        output.append(f"  f(0.5): {_fmt(report.calibration_f_half)}\n")
        if report.calibration_rms_recalibrated is not None:
            output.append(f"  Recalibrated RMS: {_fmt(report.calibration_rms_recalibrated)}\n")
            output.append(f"  Recalibrated f(0.5): {_fmt(report.calibration_f_half_recalibrated)}\n")
        coverage = report.interval_coverage
        output.append(f"  Coverage at {coverage['level']}: {_fmt(coverage['uncalibrated'])} uncalibrated, "
                      f"{_fmt(coverage['calibrated'])} calibrated\n")

        output.append("\n📉 Sparsification\n")
        output.append("-" * 70 + "\n")
        recalls = report.sparsification["recall"]
        values = report.sparsification["rmse"]
        for recall, value in zip(recalls, values):
            output.append(f"  recall {recall:>5.2f}: RMSE {value:.3f}\n")

        output.append("\n🔗 Error vs uncertainty\n")
        output.append("-" * 70 + "\n")
        for level, r in report.correlations.items():
            output.append(f"  {level}: r = {_fmt(r, 3)}\n")
        output.append(f"  Mean std in lesions: {_fmt(report.lesion_std_mean, 3)}, "
                      f"elsewhere: {_fmt(report.nonlesion_std_mean, 3)}\n")

        if report.ttest:
            output.append("\n⚖️  Paired t-test\n")
            output.append("-" * 70 + "\n")
            output.append(f"  {report.ttest['a']} vs {report.ttest['b']}: t = {report.ttest['t']:.3f}, "
                          f"df = {report.ttest['df']}, p = {report.ttest['p']:.4g}\n")

        output.append("\n" + "=" * 70 + "\n")
        output.append(self.format_summary(report))
        if report.clamped_voxels:
            output.append(f"⚠️  {report.clamped_voxels} mean voxels were clamped to [0, 255]\n")
        return "".join(output)

    def format_json(self, report: MetricReport) -> str:
        """
        Format a report as JSON

        Args:
            report: Metric report

        Returns:
            JSON string
        """
        return json.dumps(report.to_dict(), indent=2, sort_keys=True, default=_to_builtin)

    def format_summary(self, report: MetricReport) -> str:
        """
        Get a brief summary of a report

        Args:
            report: Metric report

        Returns:
            Summary string
        """
        summary = []
        summary.append("Summary:\n")
        summary.append(f"  Subjects: {len(report.subjects)}\n")
        summary.append(f"  Mean RMSE: {float(np.mean(report.rmse)):.3f}\n")
        summary.append(f"  Median RMSE: {report.rmse_boxplot['median']:.3f}\n")
        summary.append(f"  Calibration RMS: {report.calibration_rms:.4f}\n")
        return "".join(summary)


def _to_builtin(value) -> object:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_report(report: MetricReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(Reporter().format_json(report))
        f.write("\n")


def read_report(path: str) -> Dict[str, object]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
