"""Training loop, evaluation and the three-way ablation."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import nn
from .checkpoint import Checkpoint
from .data import Dataset, Split, channel_stats, epoch_order, subject_split
from .errors import ConfigError
from .features import fit_feature_stats
from .metrics import ConfusionMatrix, EvalReport, build_stamp
from .model import HarNet, HarNetConfig, finite_or_raise

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    early_stop_patience: int = 10
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigError("lr must be a positive finite number")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LogEntry:
    epoch: int
    train_loss: float
    val_accuracy: float | None
    train_accuracy: float | None = None


@dataclass
class TrainingLog:
    """Append-only record of per-epoch progress; epoch 0 is the untrained model."""

    entries: list[LogEntry] = field(default_factory=list)

    def append(self, entry: LogEntry) -> None:
        if self.entries and entry.epoch <= self.entries[-1].epoch:
            raise ValueError("log entries must have increasing epochs")
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> LogEntry:
        return self.entries[i]

    def to_list(self) -> list[dict]:
        return [asdict(e) for e in self.entries]


@dataclass
class TrainResult:
    model: HarNet  # parameters of the best-validation epoch
    checkpoint: Checkpoint
    log: TrainingLog
    best_epoch: int
    epochs_run: int
    stopped_early: bool


def config_hash(model_config: HarNetConfig, train_config: TrainConfig | None = None) -> str:
    blob = {"model": model_config.to_dict(), "train": train_config.to_dict() if train_config else None}
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]


def prepare_model(model_config: HarNetConfig, train_split: Split, seed: int) -> HarNet:
    """Fresh model carrying the preprocessing statistics of ``train_split``."""
    model = HarNet.build(model_config, seed)
    chan = channel_stats(train_split) if model_config.normalize_windows else None
    feats = fit_feature_stats(train_split) if model_config.fusion_mode == "regenerated" else None
    model.set_preprocessing(chan, feats)
    return model


def _accuracy(model: HarNet, windows: np.ndarray, fused: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    pred, _ = model.predict(windows, fused)
    return float(np.mean(pred == labels))


def _snapshot(model: HarNet) -> dict[str, np.ndarray]:
    return {k: p.value.copy() for k, p in model.params.items()}


def train(
    model_config: HarNetConfig,
    train_config: TrainConfig,
    dataset: Dataset,
    *,
    stop_at_train_accuracy: float | None = None,
    on_epoch: Callable[[LogEntry], None] | None = None,
) -> TrainResult:
    """Fit a model on ``dataset.train`` with a subject-wise validation hold-out.

    The model selected is the one with the best validation accuracy (ties keep
    the earlier epoch); without a validation set it is the last one. With
    ``stop_at_train_accuracy`` the training accuracy is measured after every
    epoch and training ends once it reaches that value.
    """
    model_config.validate()
    tc = train_config
    full = dataset.train
    tr_idx, val_idx = subject_split(full, tc.validation_fraction, tc.seed)
    tr, val = full.subset(tr_idx), full.subset(val_idx)

    # statistics come from the full official training split
    model = prepare_model(model_config, full, tc.seed)
    x_tr, f_tr = model.prepare_inputs(tr)
    x_val, f_val = model.prepare_inputs(val)
    track_train = stop_at_train_accuracy is not None
    has_val = len(val) > 0

    history = TrainingLog()

    def record(epoch: int, loss: float) -> LogEntry:
        entry = LogEntry(
            epoch,
            loss,
            _accuracy(model, x_val, f_val, val.labels) if has_val else None,
            _accuracy(model, x_tr, f_tr, tr.labels) if track_train else None,
        )
        history.append(entry)
        log.info("epoch %d loss %.5f val_acc %s", epoch, loss, entry.val_accuracy)
        if on_epoch:
            on_epoch(entry)
        return entry

    loss0 = model.loss(x_tr, f_tr, tr.labels)
    finite_or_raise(loss0, 0, 0, model)
    entry = record(0, loss0)

    best = (entry.val_accuracy if has_val else -1.0, 0, _snapshot(model))
    since_best = 0
    stopped_early = False
    epoch = 0
    params = model.parameters()
    for epoch in range(1, tc.epochs + 1):
        total, seen = 0.0, 0
        order = epoch_order(len(tr), tc.seed, epoch)
        for b, start in enumerate(range(0, len(order), tc.batch_size)):
            idx = order[start : start + tc.batch_size]
            loss, _ = model.loss_and_backward(x_tr[idx], f_tr[idx], tr.labels[idx])
            finite_or_raise(loss, epoch, b, model)
            nn.adam_step(params, lr=tc.lr)
            total += loss * len(idx)
            seen += len(idx)
        entry = record(epoch, total / seen)

        if has_val:
            if entry.val_accuracy > best[0]:
                best = (entry.val_accuracy, epoch, _snapshot(model))
                since_best = 0
            else:
                since_best += 1
        else:
            best = (-1.0, epoch, None)
        if track_train and entry.train_accuracy >= stop_at_train_accuracy:
            break
        if has_val and since_best >= tc.early_stop_patience:
            stopped_early = True
            break

    _, best_epoch, weights = best
    if weights is not None:
        for k, p in model.params.items():
            p.value[...] = weights[k]
    meta = {
        "best_epoch": best_epoch,
        "epochs_run": epoch,
        "train_config": tc.to_dict(),
        "config_hash": config_hash(model_config, tc),
        "dataset_checksum": dataset.checksum,
    }
    return TrainResult(model, model.to_checkpoint(meta), history, best_epoch, epoch, stopped_early)


def evaluate(model: HarNet, split: Split, meta: dict | None = None) -> EvalReport:
    """Predict every example of a raw split and tabulate the confusion matrix."""
    windows, fused = model.prepare_inputs(split)
    pred, _ = model.predict(windows, fused)
    report = report_from_predictions(split.labels, pred, model.config.classes)
    report.meta.update({
        "seed": model.seed,
        "config": model.config.to_dict(),
        "config_hash": config_hash(model.config),
        "build": build_stamp(),
    })
    report.meta.update(meta or {})
    return report


def report_from_predictions(actual, predicted, classes: int = 6) -> EvalReport:
    return EvalReport(ConfusionMatrix.from_predictions(actual, predicted, classes))


def report_from_confusion(counts) -> EvalReport:
    return EvalReport(ConfusionMatrix(np.asarray(counts)))


# name, reference accuracy (%), overrides on the base config
ABLATION_ROWS = (
    ("separable+features", 96.9, {}),
    ("separable-features", 93.5, {"fusion_mode": "none"}),
    ("conventional+features", 95.2, {"conv_mode": "conventional"}),
)


@dataclass
class AblationRow:
    name: str
    reference: float
    report: EvalReport
    result: TrainResult

    @property
    def accuracy(self) -> float:
        return self.report.accuracy


@dataclass
class AblationTable:
    rows: list[AblationRow]

    def by_name(self, name: str) -> AblationRow:
        return next(r for r in self.rows if r.name == name)

    def orderings(self) -> dict[str, bool]:
        full = self.by_name("separable+features").accuracy
        return {
            "separable+features > separable-features": full > self.by_name("separable-features").accuracy,
            "separable+features > conventional+features": full > self.by_name("conventional+features").accuracy,
        }

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "name": r.name,
                    "accuracy": r.accuracy,
                    "correct": r.report.correct,
                    "total": r.report.total,
                    "reference_accuracy": r.reference / 100.0,
                    "best_epoch": r.result.best_epoch,
                    "confusion": r.report.confusion.counts.tolist(),
                }
                for r in self.rows
            ],
            "orderings": self.orderings(),
        }

    def format_table(self) -> str:
        width = max(len(r.name) for r in self.rows)
        lines = [f"{'Method'.ljust(width)}  Accuracy  Reference"]
        for r in self.rows:
            lines.append(f"{r.name.ljust(width)}  {100 * r.accuracy:7.2f}%  {r.reference:8.1f}%")
        return "\n".join(lines)


def ablate(dataset: Dataset, base: HarNetConfig, train_config: TrainConfig,
           on_epoch: Callable[[str, LogEntry], None] | None = None) -> AblationTable:
    """Train and test the three reference variants under one seed protocol (sequentially)."""
    rows = []
    for name, reference, overrides in ABLATION_ROWS:
        cfg = replace(base, **overrides)
        cb = (lambda e, n=name: on_epoch(n, e)) if on_epoch else None
        result = train(cfg, train_config, dataset, on_epoch=cb)
        report = evaluate(result.model, dataset.test, {"variant": name, "best_epoch": result.best_epoch})
        rows.append(AblationRow(name, reference, report, result))
    return AblationTable(rows)
