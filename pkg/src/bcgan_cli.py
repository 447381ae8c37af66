#!/usr/bin/env python3
"""
Bayesian conditional GAN CLI
Command-line interface for data generation, training, dropout testing, calibration and evaluation
"""

import os
import sys

# BLAS/OpenMP read these once, when numpy is first imported
_threads = os.environ.get("BCGAN_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = _threads

import click  # noqa: E402
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn  # noqa: E402

# Add project root to path
project_root = os.path.join(os.path.dirname(__file__), '..')
sys.path.insert(0, project_root)

from src.bcgan import __version__  # noqa: E402
from src.bcgan.config import RunConfig, load_run_config  # noqa: E402
from src.bcgan.errors import BcganError, ConfigError  # noqa: E402
from src.bcgan.log import LOG_FILE_NAME, configure_logging, console  # noqa: E402
from src.bcgan.pipeline import (MAP_NAME, REPORT_NAME, calibration_split, run_calibration,  # noqa: E402
                                run_evaluation, run_gen_data, run_prediction, run_training)
from src.bcgan.reporter import Reporter  # noqa: E402


def _progress() -> Progress:
    return Progress(TextColumn("{task.description}"), BarColumn(), MofNCompleteColumn(), TimeElapsedColumn(),
                    console=console, transient=True)


def _fail(exc: BcganError) -> None:
    code = 2 if isinstance(exc, ConfigError) else 1
    click.echo(f"✗ {exc}", err=True)
    sys.exit(code)


def _load(config_path, preset) -> RunConfig:
    try:
        return load_run_config(config_path, preset)
    except ConfigError as exc:
        _fail(exc)


def _log_to(out_dir: str, verbose: bool) -> None:
    configure_logging(verbose, os.path.join(out_dir, LOG_FILE_NAME))


config_option = click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), default=None,
                             help='RunConfig JSON file')
preset_option = click.option('--preset', type=click.Choice(['desk', 'full']), default=None,
                             help='Start from a preset (the config file overrides it)')
force_option = click.option('--force', is_flag=True, default=False, help='Overwrite a non-empty output directory')
verbose_option = click.option('--verbose', '-v', is_flag=True, default=False, help='Debug logging')


@click.group()
@click.version_option(version=__version__, prog_name="bcgan")
def cli():
    """Bayesian conditional GAN with concrete dropout for cross-contrast synthesis."""


@cli.command('gen-data')
@config_option
@preset_option
@click.option('--out', 'out_dir', default=None, help='Dataset directory (default: paths.data_dir)')
@force_option
@verbose_option
def gen_data(config_path, preset, out_dir, force, verbose):
    """Generate synthetic phantom subjects and the split manifest."""
    config = _load(config_path, preset)
    out_dir = out_dir or config.paths.data_dir
    click.echo(f"🧪 Generating {config.data.num_subjects} subjects into: {out_dir}")
    try:
        _log_to(out_dir, verbose)
        with _progress() as progress:
            task = progress.add_task("subjects", total=config.data.num_subjects)
            manifest = run_gen_data(config, out_dir, force, progress=lambda: progress.advance(task))
    except BcganError as exc:
        _fail(exc)
    click.echo("✅ " + ", ".join(f"{name}: {len(ids)}" for name, ids in manifest.splits.items()))
    sys.exit(0)


@cli.command()
@config_option
@preset_option
@click.option('--data', 'data_dir', default=None, help='Dataset directory (default: paths.data_dir)')
@click.option('--out', 'out_dir', default=None, help='Training directory (default: paths.train_dir)')
@click.option('--dropout', type=click.Choice(['concrete', 'monte_carlo', 'none']), default=None,
              help='Override generator.dropout_kind')
@click.option('--seed', type=int, default=None, help='Override train.seed (weights, augmentation, dropout)')
@click.option('--epochs', type=int, default=None, help='Override train.epochs')
@click.option('--resume', is_flag=True, default=False, help='Continue from the latest checkpoint')
@force_option
@verbose_option
def train(config_path, preset, data_dir, out_dir, dropout, seed, epochs, resume, force, verbose):
    """Train generator and discriminator on the training split."""
    config = _load(config_path, preset)
    if dropout is not None:
        config.generator.dropout_kind = dropout
    if seed is not None:
        config.train.seed = seed
    if epochs is not None:
        if epochs < 1:
            _fail(ConfigError(f"--epochs must be positive, got {epochs}"))
        config.train.epochs = epochs
    data_dir = data_dir or config.paths.data_dir
    out_dir = out_dir or config.paths.train_dir
    click.echo(f"🏋️  Training: {config.generator.dropout_kind} dropout, {config.train.epochs} epochs -> {out_dir}")
    try:
        _log_to(out_dir, verbose)
        with _progress() as progress:
            task = progress.add_task("epochs", total=config.train.epochs)
            result = run_training(config, data_dir, out_dir, resume=resume, force=force,
                                  on_epoch=lambda epoch, row: progress.update(task, completed=epoch))
    except BcganError as exc:
        _fail(exc)
    click.echo(f"✅ {result.steps} steps, final g_l1 {result.history['g_l1'].iloc[-1]:.4f}"
               if len(result.history) else f"✅ {result.steps} steps")
    sys.exit(0)


@cli.command()
@config_option
@preset_option
@click.option('--data', 'data_dir', default=None, help='Dataset directory (default: paths.data_dir)')
@click.option('--train-dir', default=None, help='Training directory (default: paths.train_dir)')
@click.option('--checkpoint', default=None, help='Epoch directory or generator .bcgw (default: latest)')
@click.option('--split', default='test', help='Split to predict (train, calibration or test)')
@click.option('--subject', 'subjects', multiple=True,
              help='Predict only this subject id (repeatable; overrides --split)')
@click.option('--passes', type=int, default=None, help='Stochastic passes T_mc (default: posterior.num_passes)')
@click.option('--out', 'out_dir', default=None, help='Output directory (default: paths.predict_dir/<split>)')
@force_option
@verbose_option
def predict(config_path, preset, data_dir, train_dir, checkpoint, split, subjects, passes, out_dir, force, verbose):
    """Dropout testing: predictive mean and std for every subject of a split (or the named ones)."""
    config = _load(config_path, preset)
    data_dir = data_dir or config.paths.data_dir
    train_dir = train_dir or config.paths.train_dir
    out_dir = out_dir or os.path.join(config.paths.predict_dir, split)
    target = ", ".join(subjects) if subjects else f"'{split}'"
    click.echo(f"🎲 Dropout testing on {target} -> {out_dir}")
    try:
        _log_to(out_dir, verbose)
        with _progress() as progress:
            task = progress.add_task("slices", total=None)
            written = run_prediction(config, data_dir, train_dir, out_dir, split=split, checkpoint=checkpoint,
                                     num_passes=passes, force=force, subjects=list(subjects),
                                     progress=lambda n: progress.advance(task, n))
    except BcganError as exc:
        _fail(exc)
    click.echo(f"✅ Wrote {len(written)} posterior volume(s)")
    sys.exit(0)


@cli.command()
@config_option
@preset_option
@click.option('--data', 'data_dir', default=None, help='Dataset directory (default: paths.data_dir)')
@click.option('--predictions', 'pred_dir', default=None,
              help='Posteriors of the calibration split (default: paths.predict_dir/<train|calibration>)')
@click.option('--out', 'out_dir', default=None, help='Output directory (default: paths.calibrate_dir)')
@force_option
@verbose_option
def calibrate(config_path, preset, data_dir, pred_dir, out_dir, force, verbose):
    """Fit the recalibration map on calibration-split posteriors."""
    config = _load(config_path, preset)
    data_dir = data_dir or config.paths.data_dir
    pred_dir = pred_dir or os.path.join(config.paths.predict_dir, calibration_split(config))
    out_dir = out_dir or config.paths.calibrate_dir
    click.echo(f"📐 Calibrating on: {pred_dir}")
    try:
        _log_to(out_dir, verbose)
        calibration_map = run_calibration(config, pred_dir, data_dir, out_dir, force=force)
    except BcganError as exc:
        _fail(exc)
    click.echo(f"✅ Map over {calibration_map.calibration_set_size} voxels -> {os.path.join(out_dir, MAP_NAME)}")
    sys.exit(0)


@cli.command()
@config_option
@preset_option
@click.option('--data', 'data_dir', default=None, help='Dataset directory (default: paths.data_dir)')
@click.option('--predictions', 'pred_dir', default=None, help='Predictions (default: paths.predict_dir/test)')
@click.option('--map', 'map_path', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Calibration map CSV')
@click.option('--compare', nargs=2, default=None, help='Two prediction directories for a paired t-test')
@click.option('--out', 'out_dir', default=None, help='Output directory (default: paths.evaluate_dir)')
@click.option('--output', '-o', type=click.Choice(['console', 'json']), default='console', help='Output format')
@force_option
@verbose_option
def evaluate(config_path, preset, data_dir, pred_dir, map_path, compare, out_dir, output, force, verbose):
    """Metric report, curves and plots for a prediction set."""
    config = _load(config_path, preset)
    data_dir = data_dir or config.paths.data_dir
    compare_dir = None
    if compare:
        pred_dir, compare_dir = compare
    pred_dir = pred_dir or os.path.join(config.paths.predict_dir, "test")
    out_dir = out_dir or config.paths.evaluate_dir
    click.echo(f"📊 Evaluating: {pred_dir}" + (f" vs {compare_dir}" if compare_dir else ""))
    try:
        _log_to(out_dir, verbose)
        run = run_evaluation(config, pred_dir, data_dir, out_dir, map_path=map_path, compare_dir=compare_dir,
                             force=force)
    except BcganError as exc:
        _fail(exc)

    reporter = Reporter()
    if output == 'json':
        click.echo(reporter.format_json(run.output.report))
    else:
        click.echo(reporter.format_console(run.output.report))
    click.echo(f"✅ Report written to {os.path.join(out_dir, REPORT_NAME)}")
    sys.exit(0)


if __name__ == '__main__':
    cli()
