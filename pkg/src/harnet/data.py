"""UCI HAR release ingestion, window standardization and minibatching.

Expected layout under ``root``::

    train/X_train.txt  train/y_train.txt  train/subject_train.txt
    train/Inertial Signals/body_acc_x_train.txt ... total_acc_z_train.txt
    test/...           (same with _test)

Splits are kept as stacked arrays; indexing a :class:`Split` yields a
:class:`LabeledExample` view.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import AlignmentError, CorruptDataError, DegenerateChannelError, IngestError
from .tensor import Tensor

log = logging.getLogger(__name__)

CLASS_NAMES = ("Walking", "Walking Upstairs", "Walking Downstairs", "Sitting", "Standing", "Laying")
CHANNELS = (
    "body_acc_x", "body_acc_y", "body_acc_z",
    "body_gyro_x", "body_gyro_y", "body_gyro_z",
    "total_acc_x", "total_acc_y", "total_acc_z",
)
WINDOW_LENGTH = 128
N_FEATURES = 561
SAMPLING_HZ = 50.0
TRAIN_SIZE = 7352
TEST_SIZE = 2947


@dataclass(frozen=True)
class LabeledExample:
    window: np.ndarray  # [128, 9], time x channel
    features: np.ndarray  # [561]
    label: int  # 0..5
    subject: int  # 1..30


@dataclass(frozen=True)
class Split:
    windows: np.ndarray  # [n, 128, 9]
    features: np.ndarray  # [n, 561]
    labels: np.ndarray  # [n] int, 0..5
    subjects: np.ndarray  # [n] int

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> LabeledExample:
        return LabeledExample(self.windows[i], self.features[i], int(self.labels[i]), int(self.subjects[i]))

    def __iter__(self) -> Iterator[LabeledExample]:
        return (self[i] for i in range(len(self)))

    def subset(self, indices) -> "Split":
        indices = np.asarray(indices, dtype=np.intp)
        return Split(self.windows[indices], self.features[indices], self.labels[indices], self.subjects[indices])

    def class_counts(self, classes: int = len(CLASS_NAMES)) -> tuple[int, ...]:
        return tuple(int(c) for c in np.bincount(self.labels, minlength=classes))


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray  # [9]
    std: np.ndarray  # [9]


@dataclass(frozen=True)
class Dataset:
    train: Split
    test: Split
    channel_stats: ChannelStats
    normalized: bool = False
    checksum: str = ""


def channel_stats(split: Split) -> ChannelStats:
    flat = split.windows.reshape(-1, split.windows.shape[-1])
    return ChannelStats(flat.mean(axis=0), flat.std(axis=0))


def _read_matrix(path: Path, hasher) -> np.ndarray:
    if not path.is_file():
        raise IngestError(f"missing file: {path}")
    raw = path.read_bytes()
    hasher.update(path.name.encode())
    hasher.update(raw)
    try:
        arr = np.loadtxt(raw.decode("ascii").splitlines(), dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise CorruptDataError(f"{path}: {exc}") from None
    return arr


def _load_split(root: Path, name: str, hasher) -> Split:
    d = root / name
    features = _read_matrix(d / f"X_{name}.txt", hasher)
    labels = _read_matrix(d / f"y_{name}.txt", hasher)
    subjects = _read_matrix(d / f"subject_{name}.txt", hasher)
    signals = [_read_matrix(d / "Inertial Signals" / f"{ch}_{name}.txt", hasher) for ch in CHANNELS]

    n = features.shape[0]
    files = {f"X_{name}.txt": features, f"y_{name}.txt": labels, f"subject_{name}.txt": subjects}
    files.update({f"{ch}_{name}.txt": s for ch, s in zip(CHANNELS, signals)})
    for fname, arr in files.items():
        if arr.shape[0] != n:
            raise AlignmentError(f"{name}/{fname} has {arr.shape[0]} rows, X_{name}.txt has {n}")
    if features.shape[1] != N_FEATURES:
        raise CorruptDataError(f"X_{name}.txt has {features.shape[1]} columns, expected {N_FEATURES}")
    for ch, s in zip(CHANNELS, signals):
        if s.shape[1] != WINDOW_LENGTH:
            raise CorruptDataError(f"{ch}_{name}.txt has {s.shape[1]} columns, expected {WINDOW_LENGTH}")
    if labels.shape[1] != 1 or subjects.shape[1] != 1:
        raise CorruptDataError(f"{name}: label and subject files need one integer per line")

    windows = np.stack(signals, axis=-1)
    if not (np.all(np.isfinite(windows)) and np.all(np.isfinite(features))):
        raise CorruptDataError(f"{name}: non-finite values in signals or features")
    if features.min() < -1.0 or features.max() > 1.0:
        raise CorruptDataError(f"{name}: feature values outside [-1, 1]")
    y = labels[:, 0]
    if np.any(y != np.round(y)) or y.min() < 1 or y.max() > 6:
        raise CorruptDataError(f"{name}: labels must be integers in 1..6")
    subj = subjects[:, 0]
    if np.any(subj != np.round(subj)) or subj.min() < 1 or subj.max() > 30:
        raise CorruptDataError(f"{name}: subjects must be integers in 1..30")
    return Split(windows, features, y.astype(np.int64) - 1, subj.astype(np.int64))


def load_dataset(root) -> Dataset:
    """Parse a UCI HAR release directory (official train/test split)."""
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"dataset root not found: {root}")
    hasher = hashlib.sha256()
    train = _load_split(root, "train", hasher)
    test = _load_split(root, "test", hasher)
    overlap = set(train.subjects.tolist()) & set(test.subjects.tolist())
    if overlap:
        raise CorruptDataError(f"subjects appear in both splits: {sorted(overlap)}")
    log.info("loaded %s: train=%d test=%d", root, len(train), len(test))
    return Dataset(train, test, channel_stats(train), checksum=hasher.hexdigest())


def normalize_windows(ds: Dataset) -> Dataset:
    """Standardize every channel with the training-set mean and std.

    Consumes raw data exactly once; calling it on an already normalized
    dataset is an error.
    """
    if ds.normalized:
        raise ValueError("dataset windows are already normalized")
    stats = ds.channel_stats
    bad = [CHANNELS[i] if i < len(CHANNELS) else str(i) for i in np.flatnonzero(stats.std == 0.0)]
    if bad:
        raise DegenerateChannelError(f"zero training std on channel(s): {', '.join(bad)}")
    return replace(
        ds,
        train=replace(ds.train, windows=apply_channel_stats(ds.train.windows, stats)),
        test=replace(ds.test, windows=apply_channel_stats(ds.test.windows, stats)),
        normalized=True,
    )


def apply_channel_stats(windows: np.ndarray, stats: ChannelStats) -> np.ndarray:
    return (windows - stats.mean) / stats.std


def model_layout(windows: np.ndarray) -> np.ndarray:
    """``[b, 128, 9]`` (time x channel) -> ``[b, 9 streams, 1 map, 128]``."""
    return np.ascontiguousarray(windows.transpose(0, 2, 1)[:, :, None, :])


class Batch(NamedTuple):
    windows: Tensor  # [b, 9, 1, 128]
    features: Tensor  # [b, F]
    labels: np.ndarray  # [b]
    indices: np.ndarray  # positions in the split


def epoch_order(n: int, seed: int, epoch: int = 0) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(split: Split, batch_size: int, seed: int, epoch: int = 0, fused: np.ndarray | None = None) -> Iterator[Batch]:
    """Seeded shuffled minibatches covering the split once; the last may be short.

    ``fused`` replaces the release's 561 features as the per-example feature
    block (row-aligned with ``split``); it may have zero columns.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    feats = split.features if fused is None else fused
    order = epoch_order(len(split), seed, epoch)
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        yield Batch(
            Tensor.wrap(model_layout(split.windows[idx])),
            _wrap_features(feats[idx]),
            split.labels[idx],
            idx,
        )


def _wrap_features(block: np.ndarray):
    # zero-width feature blocks are legal (fusion disabled) but are not Tensors
    return Tensor.wrap(block) if block.size else np.ascontiguousarray(block, dtype=np.float64)


def subject_split(split: Split, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices (train, validation) with whole subjects held out.

    ``round(fraction * n_subjects)`` subjects are chosen with a seeded
    generator; at least one when ``fraction > 0``.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("validation fraction must be in [0, 1)")
    subjects = np.unique(split.subjects)
    n_val = int(round(fraction * len(subjects)))
    if fraction > 0:
        n_val = min(max(n_val, 1), len(subjects) - 1)
    rng = np.random.default_rng([seed, 0x5AB])
    held = np.sort(rng.choice(subjects, size=n_val, replace=False)) if n_val else np.array([], dtype=np.int64)
    is_val = np.isin(split.subjects, held)
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)
