"""
Plot output
CSV tables and standalone SVG charts for curves, scatter levels and RMSE boxplots
"""

import os
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from src.bcgan.evaluation import CurveSeries, pearson_r  # noqa: E402

# fixed ids keep SVG output byte-identical across runs
plt.rcParams["svg.hashsalt"] = "bcgan"
_SVG_METADATA = {"Date": None, "Creator": None}


def _save(fig, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)


def write_curve_csv(curve: CurveSeries, path: str) -> None:
    curve.to_frame().to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def plot_curves(curves: Sequence[CurveSeries], path: str, title: str, diagonal: bool = False,
                mark_center: bool = False) -> None:
    """Line plot of one or more series sharing axes"""
    fig, ax = plt.subplots(figsize=(5, 4), tight_layout=True)
    for curve in curves:
        ax.plot(curve.x, curve.y, marker=".", label=curve.name)
    if diagonal:
        ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=1)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
    if mark_center:
        ax.plot([0.5], [0.5], marker="o", color="black")
    ax.set_xlabel(curves[0].x_label.replace("_", " "))
    ax.set_ylabel(curves[0].y_label.replace("_", " "))
    ax.set_title(title)
    if len(curves) > 1:
        ax.legend()
    _save(fig, path)


def plot_scatter(frame: pd.DataFrame, x: str, y: str, path: str, title: str) -> None:
    """Error vs uncertainty scatter with the Pearson r in the title"""
    fig, ax = plt.subplots(figsize=(5, 4), tight_layout=True)
    ax.scatter(frame[x], frame[y], s=4, alpha=0.5)
    r = pearson_r(frame[x].to_numpy(), frame[y].to_numpy()) if len(frame) else None
    ax.set_xlabel(x.replace("_", " "))
    ax.set_ylabel(y.replace("_", " "))
    ax.set_title(f"{title} (r = {r:.3f})" if r is not None else title)
    _save(fig, path)


def plot_boxplot(samples: Dict[str, Sequence[float]], path: str, title: str = "RMSE per subject") -> None:
    """Boxplots with whiskers at 1.5 IQR; points beyond are drawn as '+' outliers"""
    fig, ax = plt.subplots(figsize=(5, 4), tight_layout=True)
    ax.boxplot(list(samples.values()), whis=1.5, flierprops={"marker": "+", "markeredgecolor": "red"})
    ax.set_xticks(range(1, len(samples) + 1), labels=list(samples.keys()))
    ax.set_ylabel("RMSE")
    ax.set_title(title)
    _save(fig, path)


def write_evaluation_plots(curves: Dict[str, CurveSeries], scatter: Dict[str, pd.DataFrame], out_dir: str) -> None:
    """Every CSV + SVG artifact of an evaluation run"""
    os.makedirs(out_dir, exist_ok=True)
    for name, curve in curves.items():
        write_curve_csv(curve, os.path.join(out_dir, f"{name}.csv"))

    plot_curves([curves["sparsification"]], os.path.join(out_dir, "sparsification.svg"), "Sparsification")
    calibration = [curves["calibration"]]
    if "calibration_recalibrated" in curves:
        calibration.append(curves["calibration_recalibrated"])
    plot_curves(calibration, os.path.join(out_dir, "calibration.svg"), "Uncertainty calibration",
                diagonal=True, mark_center=True)

    axes = {"voxel": ("abs_error", "std"), "slice": ("nrmse", "nstd"), "volume": ("nrmse", "nstd")}
    for level, frame in scatter.items():
        frame.to_csv(os.path.join(out_dir, f"error_uncertainty_{level}.csv"), index=False,
                     float_format="%.10g", lineterminator="\n")
        x, y = axes[level]
        plot_scatter(frame, x, y, os.path.join(out_dir, f"error_uncertainty_{level}.svg"),
                     f"Error vs uncertainty ({level})")
