"""
Training
Composite conditional-GAN loss and the alternating discriminator/generator loop
"""

import json
import logging
import os
import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.bcgan.autodiff import (EvaluationCache, Node, Tensor, absolute, add, backpropagate, evaluate, mean,
                                scalar_mul, softplus, sub)
from src.bcgan.checkpoint import load_checkpoint, save_checkpoint
from src.bcgan.config import DiscriminatorSpec, GeneratorSpec, TrainConfig
from src.bcgan.dataset import SliceDataset
from src.bcgan.errors import CheckpointError, NonFiniteError, TrainingDivergedError
from src.bcgan.networks import (Mode, NetworkInstance, build_discriminator, build_generator,
                                collect_regularizers, discriminator_forward, generator_forward)
from src.bcgan.optim import Adam
from src.bcgan.rng import derive_stream

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["epoch", "d_loss", "g_gan", "g_l1", "g_kl"]
EPOCH_DIR = re.compile(r"^epoch_(\d{3,})$")
CHECKPOINT_FILES = ("generator", "discriminator", "adam_g", "adam_d")


def bce_with_logits(logits: Node, target: float) -> Node:
    """
    Mean binary cross-entropy of sigmoid(logits) against a constant target

    Uses -log sigmoid(z) = softplus(-z) and -log(1 - sigmoid(z)) = softplus(z),
    which stay finite for any finite logit.
    """
    if not 0.0 <= target <= 1.0:
        raise ValueError(f"target must lie in [0, 1], got {target}")
    if target == 1.0:
        return mean(softplus(scalar_mul(logits, -1.0)))
    if target == 0.0:
        return mean(softplus(logits))
    return add(scalar_mul(mean(softplus(scalar_mul(logits, -1.0))), target),
               scalar_mul(mean(softplus(logits)), 1.0 - target))


def generator_loss_terms(d_fake_logits: Node, fake: Node, real: Node, kl_reg: Node,
                         cfg: TrainConfig) -> Dict[str, Node]:
    """Weighted terms of the generator objective plus their sum under "total" """
    gan = bce_with_logits(d_fake_logits, 1.0)
    l1 = mean(absolute(sub(fake, real)))
    total = add(add(gan, scalar_mul(l1, cfg.lambda_l1)), scalar_mul(kl_reg, cfg.lambda_kl))
    return {"g_gan": gan, "g_l1": l1, "g_kl": kl_reg, "total": total}


def generator_loss(d_fake_logits: Node, fake: Node, real: Node, kl_reg: Node, cfg: TrainConfig) -> Node:
    """bce(D(x, G(x)), 1) + lambda_l1 * mean|G(x) - y| + lambda_kl * KL regularizer"""
    return generator_loss_terms(d_fake_logits, fake, real, kl_reg, cfg)["total"]


def discriminator_loss(d_real_logits: Node, d_fake_logits: Node) -> Node:
    return scalar_mul(add(bce_with_logits(d_real_logits, 1.0), bce_with_logits(d_fake_logits, 0.0)), 0.5)


@dataclass
class TrainingResult:
    generator: NetworkInstance
    discriminator: NetworkInstance
    history: pd.DataFrame
    steps: int


@dataclass
class _Optimizers:
    generator: Adam
    discriminator: Adam


def probability_columns(generator: NetworkInstance) -> List[str]:
    return [f"p_{position}" for position in generator.dropout_layers]


def train(dataset: SliceDataset, gen_spec: GeneratorSpec, disc_spec: DiscriminatorSpec, cfg: TrainConfig,
          checkpoint_dir: Optional[str] = None, resume: bool = False,
          on_epoch: Optional[Callable[[int, Dict[str, float]], None]] = None,
          on_batch: Optional[Callable[[], None]] = None) -> TrainingResult:
    """
    Train the generator and discriminator with alternating ADAM steps

    Per batch the discriminator is updated on (x, y) against (x, G(x)) with G(x)
    detached, then the generator is updated on generator_loss including the
    concrete dropout regularizers. The generator forward is evaluated once per
    batch and shared by both steps. Discriminator running statistics are updated
    by the real and fake passes of its own step only.

    Args:
        dataset: Training slices
        gen_spec: Generator layout
        disc_spec: Discriminator layout
        cfg: Optimizer, loss and augmentation settings (cfg.seed drives every stream)
        checkpoint_dir: Where epoch_XXX checkpoints go; nothing is written when None
        resume: Continue from the latest checkpoint in checkpoint_dir
        on_epoch: Called with (epoch, history row) after each epoch
        on_batch: Called after each batch

    Returns:
        TrainingResult with one history row per epoch

    Raises:
        TrainingDivergedError: A loss term became non-finite
    """
    seed = int(cfg.seed or 0)
    generator = build_generator(gen_spec, seed, temperature=cfg.temperature, c_w=cfg.c_w, c_d=cfg.c_d)
    discriminator = build_discriminator(disc_spec, seed)
    optimizers = _Optimizers(Adam(generator.params, cfg), Adam(discriminator.params, cfg))
    generator.set_mode(Mode.TRAIN)
    discriminator.set_mode(Mode.TRAIN)

    rows: List[Dict[str, float]] = []
    start_epoch, step = 1, 0
    if resume:
        if checkpoint_dir is None:
            raise CheckpointError("resume requested without a checkpoint directory")
        latest = latest_checkpoint(checkpoint_dir)
        if latest is None:
            raise CheckpointError(f"no checkpoint to resume from in {checkpoint_dir}")
        finished, step, rows = load_training_state(latest, generator, discriminator, optimizers)
        start_epoch = finished + 1
        logger.info("resuming after epoch %d (step %d) from %s", finished, step, latest)

    for epoch in range(start_epoch, cfg.epochs + 1):
        sums = {name: 0.0 for name in LOSS_COLUMNS[1:]}
        batches = 0
        rng = derive_stream(seed, "augment", epoch)
        for batch_index, (source, target) in enumerate(
                dataset.batches(rng, cfg.batch_size, cfg.resize_to, cfg.crop_to), start=1):
            terms = _train_step(generator, discriminator, optimizers, source, target, cfg, seed, step,
                                epoch, batch_index)
            for name in sums:
                sums[name] += terms[name]
            batches += 1
            step += 1
            if on_batch is not None:
                on_batch()

        row: Dict[str, float] = {"epoch": epoch}
        row.update({name: value / max(batches, 1) for name, value in sums.items()})
        for position, p in generator.dropout_probabilities().items():
            row[f"p_{position}"] = p
        rows.append(row)
        logger.info("epoch %d/%d: d_loss=%.4f g_gan=%.4f g_l1=%.4f g_kl=%.3g", epoch, cfg.epochs,
                    row["d_loss"], row["g_gan"], row["g_l1"], row["g_kl"])
        if checkpoint_dir is not None:
            save_training_state(os.path.join(checkpoint_dir, f"epoch_{epoch:03d}"), generator, discriminator,
                                optimizers, epoch, step, rows)
        if on_epoch is not None:
            on_epoch(epoch, row)

    history = pd.DataFrame(rows, columns=LOSS_COLUMNS + probability_columns(generator))
    history["epoch"] = history["epoch"].astype(int)
    return TrainingResult(generator, discriminator, history, step)


def _train_step(generator: NetworkInstance, discriminator: NetworkInstance, optimizers: _Optimizers,
                source: np.ndarray, target: np.ndarray, cfg: TrainConfig, seed: int, step: int,
                epoch: int, batch: int) -> Dict[str, float]:
    x = Tensor(source, dtype=generator.dtype)
    y = Tensor(target, dtype=generator.dtype)
    terms: Dict[str, float] = {}
    try:
        fake = generator_forward(generator, x, Mode.TRAIN, seed=seed, pass_index=step)
        cache = EvaluationCache()
        detached = evaluate(fake, cache)

        discriminator.zero_grad()
        d_real = discriminator_forward(discriminator, x, y, Mode.TRAIN)
        d_fake = discriminator_forward(discriminator, x, Tensor(detached.data, dtype=generator.dtype), Mode.TRAIN)
        d_loss = discriminator_loss(d_real, d_fake)
        d_cache = EvaluationCache()
        terms["d_loss"] = evaluate(d_loss, d_cache).item()
        _require_finite(terms, epoch, batch)
        backpropagate(d_loss, d_cache, params=discriminator.parameters())
        optimizers.discriminator.step()

        generator.zero_grad()
        d_judged = discriminator_forward(discriminator, x, fake, Mode.TRAIN, track_stats=False)
        g_terms = generator_loss_terms(d_judged, fake, y, collect_regularizers(generator), cfg)
        for name in ("g_gan", "g_l1", "g_kl"):
            terms[name] = evaluate(g_terms[name], cache).item()
        _require_finite(terms, epoch, batch)
        backpropagate(g_terms["total"], cache, params=generator.parameters())
        optimizers.generator.step()
    except NonFiniteError as exc:
        raise TrainingDivergedError(epoch, batch, terms, cause=str(exc)) from exc
    return terms


def _require_finite(terms: Dict[str, float], epoch: int, batch: int) -> None:
    if not all(np.isfinite(value) for value in terms.values()):
        raise TrainingDivergedError(epoch, batch, terms)


def save_training_state(directory: str, generator: NetworkInstance, discriminator: NetworkInstance,
                        optimizers: _Optimizers, epoch: int, step: int, rows: List[Dict[str, float]]) -> None:
    """Write networks, optimizer moments and counters of one epoch"""
    os.makedirs(directory, exist_ok=True)
    save_checkpoint(os.path.join(directory, "generator.bcgw"), generator.state_dict())
    save_checkpoint(os.path.join(directory, "discriminator.bcgw"), discriminator.state_dict())
    save_checkpoint(os.path.join(directory, "adam_g.bcgw"), optimizers.generator.state_dict())
    save_checkpoint(os.path.join(directory, "adam_d.bcgw"), optimizers.discriminator.state_dict())
    with open(os.path.join(directory, "state.json"), "w", encoding="utf-8") as f:
        json.dump({"epoch": epoch, "step": step, "history": rows}, f, indent=2)
        f.write("\n")


def load_training_state(directory: str, generator: NetworkInstance, discriminator: NetworkInstance,
                        optimizers: _Optimizers) -> Tuple[int, int, List[Dict[str, float]]]:
    """Restore a checkpoint written by save_training_state; returns (epoch, step, history rows)"""
    generator.load_state_dict(load_checkpoint(os.path.join(directory, "generator.bcgw")))
    discriminator.load_state_dict(load_checkpoint(os.path.join(directory, "discriminator.bcgw")))
    optimizers.generator.load_state_dict(load_checkpoint(os.path.join(directory, "adam_g.bcgw")))
    optimizers.discriminator.load_state_dict(load_checkpoint(os.path.join(directory, "adam_d.bcgw")))
    try:
        with open(os.path.join(directory, "state.json"), "r", encoding="utf-8") as f:
            state = json.load(f)
        return int(state["epoch"]), int(state["step"]), list(state["history"])
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"unreadable training state in {directory}: {exc}") from exc


def latest_checkpoint(checkpoint_dir: str) -> Optional[str]:
    if not os.path.isdir(checkpoint_dir):
        return None
    epochs = []
    for name in os.listdir(checkpoint_dir):
        match = EPOCH_DIR.match(name)
        if match and os.path.isfile(os.path.join(checkpoint_dir, name, "state.json")):
            epochs.append((int(match.group(1)), name))
    if not epochs:
        return None
    return os.path.join(checkpoint_dir, max(epochs)[1])


def load_generator(checkpoint: str, gen_spec: GeneratorSpec, cfg: TrainConfig) -> NetworkInstance:
    """
    Build a generator and load weights from an epoch directory or a generator .bcgw file

    Returns:
        Generator in EVAL_STOCHASTIC mode
    """
    path = os.path.join(checkpoint, "generator.bcgw") if os.path.isdir(checkpoint) else checkpoint
    generator = build_generator(gen_spec, int(cfg.seed or 0), temperature=cfg.temperature, c_w=cfg.c_w,
                                c_d=cfg.c_d)
    generator.load_state_dict(load_checkpoint(path))
    generator.set_mode(Mode.EVAL_STOCHASTIC)
    return generator
