"""Optimizer loop, metrics, best-epoch checkpoint selection and seeded
reproducibility.  One trainer serves both the reconstruction model and the
grid baselines: anything exposing ``forward_batch(batch, mode, generator)``
that returns normalized-speed predictions ``[B, k]`` can be trained.

Loss is mean absolute error in normalized speed space; every reported
metric is in original units.
"""

from __future__ import annotations

import copy
import csv
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .batching import WindowTensorSource, permute_batch
from .datasets import SpeedScaler

MAPE_EPS = 1e-3


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    weight_decay: float = 1e-5
    batch_size: int = 32
    epochs: int = 50
    loss: str = "mae"
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.loss != "mae":
            raise ValueError("only MAE loss is supported")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid batch_size/epochs")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "loss": self.loss,
            "shuffle": self.shuffle,
            "seed": self.seed,
        }


@dataclass
class EpochRecord:
    epoch: int
    train_mae: float
    val_mae: float
    val_rmse: float
    val_mape: float
    seconds: float

    def metrics_tuple(self) -> tuple:
        """Everything except wall-clock time (the reproducible part)."""
        return (self.epoch, self.train_mae, self.val_mae, self.val_rmse, self.val_mape)


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    history: list[EpochRecord]


@dataclass(frozen=True)
class MetricReport:
    """Mean and sample standard deviation of each metric over runs."""

    mae: tuple[float, float]
    rmse: tuple[float, float]
    mape: tuple[float, float]
    split: str
    seeds: tuple[int, ...]
    seconds: float

    @classmethod
    def from_runs(
        cls, runs: list[dict], split: str, seeds: list[int], seconds: float
    ) -> "MetricReport":
        def agg(key):
            vals = np.array([r[key] for r in runs], dtype=np.float64)
            std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            return (float(vals.mean()), std)

        return cls(
            mae=agg("mae"),
            rmse=agg("rmse"),
            mape=agg("mape"),
            split=split,
            seeds=tuple(seeds),
            seconds=seconds,
        )


def compute_metrics(predictions: np.ndarray, targets: np.ndarray) -> dict:
    """MAE / RMSE / MAPE in the units of the arguments.  MAPE skips targets
    with magnitude below ``MAPE_EPS``."""
    predictions = np.asarray(predictions, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if predictions.size == 0:
        raise ValueError("cannot compute metrics on an empty split")
    err = predictions - targets
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err**2).mean()))
    keep = np.abs(targets) > MAPE_EPS
    mape = float((np.abs(err[keep]) / np.abs(targets[keep])).mean()) if keep.any() else 0.0
    return {"mae": mae, "rmse": rmse, "mape": mape}


def _iter_batches(starts: np.ndarray, batch_size: int):
    for lo in range(0, len(starts), batch_size):
        yield starts[lo : lo + batch_size]


def best_epoch_index(val_maes: list[float]) -> int:
    """1-based epoch with the lowest validation MAE (first on ties)."""
    if not val_maes:
        return 0
    return int(np.argmin(val_maes)) + 1


def evaluate(
    model,
    source: WindowTensorSource,
    starts: np.ndarray,
    scaler: SpeedScaler,
    batch_size: int = 32,
    permute_generator: np.random.Generator | None = None,
) -> dict:
    """Deterministic (argmax-assignment) evaluation in original units."""
    starts = np.asarray(starts)
    if starts.size == 0:
        raise ValueError("cannot evaluate an empty split")
    need_dense = getattr(model, "needs_dense_input", False)
    preds, targets = [], []
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    with torch.no_grad():
        for chunk in _iter_batches(np.asarray(starts), batch_size):
            batch = source.batch(chunk, need_dense=need_dense)
            if getattr(model, "use_permutation", False) and permute_generator is not None:
                batch = permute_batch(batch, permute_generator)
            out = model.forward_batch(batch, mode="argmax")
            preds.append(scaler.denormalize(out.detach().numpy()))
            targets.append(batch.targets.numpy())
    if was_training and hasattr(model, "train"):
        model.train()
    return compute_metrics(np.concatenate(preds), np.concatenate(targets))


def train(
    model,
    source: WindowTensorSource,
    train_starts: np.ndarray,
    val_starts: np.ndarray,
    config: TrainConfig,
    scaler: SpeedScaler,
) -> TrainResult:
    """Adaptive-moment descent with decoupled weight decay; selects the epoch
    with the best validation MAE.  Fully deterministic given the config seed
    and single-worker batch order."""
    train_starts = np.asarray(train_starts)
    val_starts = np.asarray(val_starts)
    if train_starts.size == 0 or val_starts.size == 0:
        raise ValueError("train and validation splits must be non-empty")

    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    shuffle_rng = np.random.default_rng(config.seed)
    sample_gen = torch.Generator().manual_seed(config.seed)
    perm_rng = np.random.default_rng(config.seed + 7919)
    need_dense = getattr(model, "needs_dense_input", False)
    use_perm = getattr(model, "use_permutation", False)

    best_state: dict | None = None
    best_epoch = -1
    best_val = math.inf
    history: list[EpochRecord] = []

    for epoch in range(1, config.epochs + 1):
        tic = time.perf_counter()
        order = shuffle_rng.permutation(train_starts) if config.shuffle else train_starts
        model.train()
        abs_err_sum = 0.0
        count = 0
        for batch_idx, chunk in enumerate(_iter_batches(order, config.batch_size)):
            batch = source.batch(chunk, need_dense=need_dense)
            if use_perm:
                batch = permute_batch(batch, perm_rng)
            predictions = model.forward_batch(batch, generator=sample_gen)
            target_norm = scaler.normalize(batch.targets)
            loss = (predictions - target_norm).abs().mean()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {batch_idx}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            abs_err_sum += float(loss.detach()) * predictions.numel()
            count += predictions.numel()

        val = evaluate(
            model, source, val_starts, scaler,
            batch_size=config.batch_size, permute_generator=perm_rng,
        )
        record = EpochRecord(
            epoch=epoch,
            train_mae=scaler.std * abs_err_sum / max(count, 1),
            val_mae=val["mae"],
            val_rmse=val["rmse"],
            val_mape=val["mape"],
            seconds=time.perf_counter() - tic,
        )
        history.append(record)
        if record.val_mae < best_val:
            best_val = record.val_mae
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())

    if best_state is None:  # epochs == 0: keep the initial parameters
        best_state = copy.deepcopy(model.state_dict())
        best_epoch = 0
    return TrainResult(best_state=best_state, best_epoch=best_epoch, history=history)


# ---------------------------------------------------------------------------
# History / report files
# ---------------------------------------------------------------------------

HISTORY_HEADER = ["epoch", "train_mae", "val_mae", "val_rmse", "val_mape", "seconds"]
REPORT_HEADER = ["model", "dropout", "seed", "split", "mae", "rmse", "mape"]


def write_history(path: str | os.PathLike, history: list[EpochRecord]) -> None:
    _write_csv(
        path,
        HISTORY_HEADER,
        [
            [r.epoch, _fmt(r.train_mae), _fmt(r.val_mae), _fmt(r.val_rmse),
             _fmt(r.val_mape), _fmt(r.seconds)]
            for r in history
        ],
    )


def write_report(path: str | os.PathLike, rows: list[dict]) -> None:
    _write_csv(
        path,
        REPORT_HEADER,
        [
            [row["model"], row["dropout"], row["seed"], row["split"],
             _fmt(row["mae"]), _fmt(row["rmse"]), _fmt(row["mape"])]
            for row in rows
        ],
    )


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _write_csv(path: str | os.PathLike, header: list[str], rows: list[list]) -> None:
    """Atomic CSV write (temp file then rename)."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)
