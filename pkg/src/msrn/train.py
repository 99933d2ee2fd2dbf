"""Training protocol: RMSProp, plateau halving, early stop, best-on-val
checkpointing, and the learning-rate grid search.

Improvement means a strictly lower value than the best seen so far.  The
plateau rule halves the learning rate once the count of consecutive
non-improving validation-loss epochs reaches ``lr_patience`` (the counter
resets after each halving); early stopping fires once the streak reaches
``stop_patience`` (never reset by halvings).  The checkpoint criterion is
validation overall accuracy, while both schedules watch validation loss;
each epoch records all three signals.

Deterministic seeding scheme for a run seed S: parameter init uses
default_rng(S), dropout masks default_rng((S, 0)), and epoch E's batch
shuffle default_rng((S, E)).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import HsiCube, LabelMap, SplitAssignment, make_batches, patch_batch
from .engine import Tape, Tensor, backprop, softmax_cross_entropy
from .errors import ConfigError, DataError, NumericError
from .model import Model, ModelSpec, build_model


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    lr_grid: Tuple[float, ...] = (3e-3, 1e-3, 3e-4, 1e-4, 3e-5)
    batch_size: int = 16
    rmsprop_rho: float = 0.9
    rmsprop_eps: float = 1e-7
    lr_patience: int = 5
    stop_patience: int = 15
    max_epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or any(r <= 0 for r in self.lr_grid):
            raise ConfigError("learning rates must be positive")
        if not 0.0 < self.rmsprop_rho < 1.0:
            raise ConfigError(f"rmsprop_rho must be in (0, 1), got {self.rmsprop_rho}")
        if self.rmsprop_eps <= 0:
            raise ConfigError("rmsprop_eps must be positive")
        if self.lr_patience < 1 or self.stop_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if self.stop_patience < self.lr_patience:
            raise ConfigError("stop_patience must be >= lr_patience")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError(
                f"max_epochs must be >= 1 (no epoch means nothing to "
                f"checkpoint), got {self.max_epochs}")


def rmsprop_step(param: Tensor, grad: np.ndarray, state: np.ndarray,
                 lr: float, rho: float, eps: float) -> Tuple[Tensor, np.ndarray]:
    """s <- rho*s + (1-rho)*g^2 ; p <- p - lr*g / (sqrt(s) + eps), in place."""
    if grad.shape != param.data.shape or state.shape != param.data.shape:
        raise ConfigError(
            f"rmsprop shapes disagree: param {param.data.shape}, "
            f"grad {grad.shape}, state {state.shape}")
    if not np.isfinite(grad).all():
        raise NumericError(f"non-finite gradient for parameter {param.name!r}")
    state *= rho
    state += (1.0 - rho) * grad * grad
    param.data -= lr * grad / (np.sqrt(state) + eps)
    if not np.isfinite(param.data).all():
        raise NumericError(f"non-finite update for parameter {param.name!r}")
    return param, state


class RmspropOptimizer:
    """Per-parameter accumulators over a model's learnables."""

    def __init__(self, learnables: Sequence[Tuple[str, Tensor]], lr: float,
                 rho: float, eps: float):
        self.learnables = list(learnables)
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.state: Dict[int, np.ndarray] = {
            t.uid: np.zeros_like(t.data) for _, t in self.learnables}

    def step(self, grads: Dict[int, Tensor]) -> None:
        for _, tensor in self.learnables:
            rmsprop_step(tensor, grads[tensor.uid].data, self.state[tensor.uid],
                         self.lr, self.rho, self.eps)


def plateau_lr(val_losses: Sequence[float], base_lr: float, lr_patience: int) -> float:
    """Learning rate in effect after replaying the halving rule over a trace."""
    best = math.inf
    lr = base_lr
    since_improvement = 0
    for loss in val_losses:
        if loss < best:
            best = loss
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= lr_patience:
                lr *= 0.5
                since_improvement = 0
    return lr


def early_stop(val_losses: Sequence[float], stop_patience: int) -> bool:
    """True once the trailing non-improving streak reaches the patience."""
    best = math.inf
    streak = 0
    for loss in val_losses:
        if loss < best:
            best = loss
            streak = 0
        else:
            streak += 1
    return streak >= stop_patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_oa: float
    lr: float


@dataclass
class TrainHistory:
    epochs: List[EpochRecord] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        """Epoch with minimal validation loss (ties resolve earliest)."""
        losses = [e.val_loss for e in self.epochs]
        return int(np.argmin(losses)) + 1

    @property
    def checkpoint_epoch(self) -> int:
        """Epoch whose model was checkpointed: maximal validation OA,
        earliest on ties (later epochs only overwrite on strict improvement)."""
        oas = [e.val_oa for e in self.epochs]
        return int(np.argmax(oas)) + 1

    def to_dict(self) -> dict:
        return {
            "epochs": [asdict(e) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "checkpoint_epoch": self.checkpoint_epoch,
        }

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class TrainData:
    """Everything the loop consumes; the cube is already standardized."""

    cube: HsiCube
    labels: LabelMap
    split: SplitAssignment


def _eval_logits(model: Model, cube: HsiCube, indices: np.ndarray,
                 batch_size: int) -> np.ndarray:
    """EVAL-mode logits for the given pixels, batched."""
    pieces = []
    for start in range(0, len(indices), batch_size):
        chunk = indices[start:start + batch_size]
        patches = patch_batch(cube, chunk, model.spec.patch_size)
        pieces.append(model.forward(Tensor(patches), "EVAL").data)
    return np.concatenate(pieces) if pieces else np.zeros((0, model.spec.classes))


def _training_metadata(config: TrainConfig, data: TrainData, epoch: int,
                       val_oa: float, val_loss: float) -> dict:
    cfg = asdict(config)
    cfg["lr_grid"] = list(cfg["lr_grid"])
    return {
        "config": cfg,
        "epoch": epoch,
        "val_oa": val_oa,
        "val_loss": val_loss,
        "band_mean": None if data.cube.band_mean is None else data.cube.band_mean.tolist(),
        "band_std": None if data.cube.band_std is None else data.cube.band_std.tolist(),
    }


def train_loop(model: Model, data: TrainData, config: TrainConfig,
               checkpoint_path, history_path=None) -> Tuple[Checkpoint, TrainHistory]:
    """Run the full protocol; returns the best-on-validation checkpoint
    (re-read from disk) and the per-epoch history."""
    split = data.split
    if len(split.train) == 0 or len(split.val) == 0:
        raise DataError("training requires nonempty TRAIN and VAL partitions")
    flat_labels = data.labels.labels.reshape(-1).astype(np.int64)

    optimizer = RmspropOptimizer(model.params.learnables(), config.learning_rate,
                                 config.rmsprop_rho, config.rmsprop_eps)
    dropout_rng = np.random.default_rng((config.seed, 0))
    history = TrainHistory()
    val_losses: List[float] = []
    best_oa = -math.inf

    for epoch in range(1, config.max_epochs + 1):
        optimizer.lr = plateau_lr(val_losses, config.learning_rate, config.lr_patience)
        loss_sum = 0.0
        sample_count = 0
        for batch_idx, batch in enumerate(make_batches(split, config.batch_size,
                                                       config.seed, epoch)):
            try:
                patches = Tensor(patch_batch(data.cube, batch, model.spec.patch_size))
                tape = Tape()
                logits = model.forward(patches, "TRAIN", tape=tape, rng=dropout_rng)
                loss, _ = softmax_cross_entropy(logits, flat_labels[batch] - 1,
                                                tape=tape)
                grads = backprop(tape, loss)
                optimizer.step(grads)
            except NumericError as exc:
                raise NumericError(
                    f"epoch {epoch}, batch {batch_idx}: {exc}") from exc
            loss_sum += loss.item() * len(batch)
            sample_count += len(batch)

        val_logits = _eval_logits(model, data.cube, split.val, config.batch_size)
        val_truth = flat_labels[split.val] - 1
        val_loss = softmax_cross_entropy(Tensor(val_logits), val_truth)[0].item()
        val_oa = float(np.mean(val_logits.argmax(axis=1) == val_truth))
        history.epochs.append(EpochRecord(
            epoch=epoch, train_loss=loss_sum / sample_count,
            val_loss=val_loss, val_oa=val_oa, lr=optimizer.lr))
        val_losses.append(val_loss)

        if val_oa > best_oa:
            best_oa = val_oa
            save_checkpoint(checkpoint_path, model,
                            training=_training_metadata(config, data, epoch,
                                                        val_oa, val_loss))
        if early_stop(val_losses, config.stop_patience):
            break

    if history_path is not None:
        history.write(history_path)
    return load_checkpoint(checkpoint_path), history


def lr_grid_search(model_spec: ModelSpec, data: TrainData, config: TrainConfig,
                   out_dir, table_path=None) -> dict:
    """One complete run per grid rate (shared seed); selects the rate with the
    best validation OA, preferring the smaller rate on ties."""
    if not config.lr_grid:
        raise ConfigError("learning-rate grid must be nonempty")
    results = []
    for idx, rate in enumerate(config.lr_grid):
        run_config = replace(config, learning_rate=rate)
        model = build_model(model_spec, np.random.default_rng(config.seed))
        ckpt_path = os.path.join(out_dir, f"grid_{idx}.msrn")
        hist_path = os.path.join(out_dir, f"grid_{idx}_history.json")
        checkpoint, history = train_loop(model, data, run_config, ckpt_path,
                                         hist_path)
        results.append({
            "learning_rate": rate,
            "val_oa": checkpoint.training["val_oa"],
            "val_loss": checkpoint.training["val_loss"],
            "epochs_run": len(history.epochs),
            "checkpoint": os.path.basename(ckpt_path),
        })
    best_oa = max(r["val_oa"] for r in results)
    selected = min(r["learning_rate"] for r in results if r["val_oa"] == best_oa)
    table = {"results": results, "selected_rate": selected}
    if table_path is not None:
        with open(table_path, "w") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return table
