"""Freeze-and-train loop with per-epoch validation."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from ..data import Dataset
from ..decoder import predict_mask
from ..metrics import ConfusionCounts, MetricsReport, accumulate, compute_metrics
from ..model import SegModel
from ..tensor import Tensor, backward, no_grad
from .config import TrainConfig
from .loss import bce_dice_loss
from .optim import AdamW, cosine_lr


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: Optional[float] = None
    val: Optional[MetricsReport] = None


HISTORY_COLUMNS = ("epoch", "lr", "train_loss", "val_loss") + MetricsReport.CSV_HEADER


def history_csv(records: list[EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for r in records:
        metrics = r.val.csv_values() if r.val is not None else ("",) * len(MetricsReport.CSV_HEADER)
        w.writerow([r.epoch, repr(r.lr), repr(r.train_loss),
                    "" if r.val_loss is None else repr(r.val_loss), *(repr(v) if v != "" else v for v in metrics)])
    return buf.getvalue()


@dataclass
class TrainState:
    config: TrainConfig
    optimizer: AdamW
    rng: np.random.Generator
    epoch: int = 0  # completed epochs
    history: list[EpochRecord] = field(default_factory=list)

    @classmethod
    def fresh(cls, model: SegModel, config: TrainConfig) -> "TrainState":
        opt = AdamW(list(model.named_parameters()), config.beta1, config.beta2, config.eps_opt,
                    config.weight_decay)
        return cls(config, opt, np.random.default_rng([config.seed, 3]))

    def header(self) -> dict:
        return {
            "train": asdict(self.config),
            "epoch": self.epoch,
            "step_count": self.optimizer.step_count,
            "rng_state": self.rng.bit_generator.state,
        }

    @classmethod
    def from_checkpoint(cls, model: SegModel, header: dict, tensors: dict) -> "TrainState":
        state = cls.fresh(model, TrainConfig(**header["train"]))
        state.epoch = header["epoch"]
        state.optimizer.step_count = header["step_count"]
        for name in state.optimizer.m:
            state.optimizer.m[name] = tensors[f"adam_m/{name}"].copy()
            state.optimizer.v[name] = tensors[f"adam_v/{name}"].copy()
        state.rng.bit_generator.state = header["rng_state"]
        return state


@dataclass
class TrainResult:
    history: list[EpochRecord]
    state: TrainState
    seconds: float


def predict_logits(model: SegModel, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    with no_grad():
        outs = [model(Tensor(images[i:i + batch_size])).data for i in range(0, len(images), batch_size)]
    return np.concatenate(outs)


def evaluate(model: SegModel, dataset: Dataset, config: TrainConfig,
             predictor: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> tuple[ConfusionCounts, MetricsReport, float]:
    """Confusion counts, metrics and mean loss over ``dataset``.

    ``predictor`` replaces the model's binarised output (images -> masks); the
    loss is then reported as NaN.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    counts = ConfusionCounts()
    losses = []
    for batch in dataset.batches(config.batch_size):
        if predictor is not None:
            pred = predictor(batch.images)
            losses.append(float("nan"))
        else:
            with no_grad():
                logits = model(Tensor(batch.images))
                losses.append(bce_dice_loss(logits, batch.masks, config).item() * len(batch.ids))
            pred = predict_mask(logits, config.threshold)
        counts = accumulate(pred, batch.masks, counts)
    return counts, compute_metrics(counts), float(np.sum(losses) / len(dataset))


def train(model: SegModel, train_set: Dataset, val_set: Optional[Dataset], config: TrainConfig,
          state: Optional[TrainState] = None, max_steps: Optional[int] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Train trainable parameters for ``config.epochs`` epochs (resuming from ``state``).

    The caller applies the freeze policy first. ``max_steps`` stops early after
    that many optimizer steps (the partial epoch is still recorded).
    """
    if len(train_set) == 0:
        raise ValueError("training dataset is empty")
    if any(p.data.strides and 0 in p.data.strides and p.size > 1 for p in model.parameters()):
        raise ValueError("shape-only model cannot be trained")
    state = state or TrainState.fresh(model, config)
    opt = state.optimizer
    t0 = time.perf_counter()
    steps = 0
    while state.epoch < config.epochs:
        lr = cosine_lr(state.epoch, config)
        total, seen = 0.0, 0
        for batch in train_set.batches(config.batch_size, state.rng):
            opt.zero_grad()
            loss = bce_dice_loss(model(Tensor(batch.images)), batch.masks, config)
            backward(loss)
            opt.step(lr)
            total += loss.item() * len(batch.ids)
            seen += len(batch.ids)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        opt.zero_grad()
        state.epoch += 1
        record = EpochRecord(state.epoch, lr, total / seen)
        if val_set is not None and len(val_set):
            _, record.val, record.val_loss = evaluate(model, val_set, config)
        state.history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if max_steps is not None and steps >= max_steps:
            break
    return TrainResult(state.history, state, time.perf_counter() - t0)
