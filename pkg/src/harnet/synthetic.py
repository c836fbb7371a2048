"""Synthetic stand-in for the UCI HAR release, written in the official layout.

Each class gets its own motion signature (dominant frequency, amplitude,
gravity orientation) perturbed per subject and per window, so the classes
are learnable but not trivially so. The 561-column feature matrix is a fixed
random projection of the regenerated statistical features squashed into
[-1, 1]; it carries class information but makes no attempt to mimic the
real release's feature definitions.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import CHANNELS, N_FEATURES, SAMPLING_HZ, WINDOW_LENGTH
from .features import FeatureCatalog, feature_matrix

TEST_SUBJECTS = (2, 4, 9, 10, 12, 13, 18, 20, 24)
TRAIN_SUBJECTS = tuple(s for s in range(1, 31) if s not in TEST_SUBJECTS)

# freq Hz, body amplitude, gyro amplitude, gravity direction (x, y, z)
_PROFILES = (
    (1.9, 0.25, 0.60, (1.00, -0.15, 0.05)),  # walking
    (1.7, 0.30, 0.75, (0.98, -0.20, 0.15)),  # upstairs
    (2.2, 0.40, 0.90, (1.00, -0.10, -0.10)),  # downstairs
    (0.0, 0.01, 0.02, (0.85, 0.20, 0.45)),  # sitting
    (0.0, 0.01, 0.02, (0.98, -0.15, 0.10)),  # standing
    (0.0, 0.01, 0.02, (0.05, 0.60, 0.80)),  # laying
)


def _window(label: int, subject_gain: float, rng: np.random.Generator) -> np.ndarray:
    freq, amp, gyro_amp, gravity = _PROFILES[label]
    t = np.arange(WINDOW_LENGTH) / SAMPLING_HZ
    out = np.empty((WINDOW_LENGTH, len(CHANNELS)))
    f = freq * rng.uniform(0.9, 1.1)
    for axis in range(3):
        phase = rng.uniform(0, 2 * np.pi)
        a = amp * subject_gain * rng.uniform(0.7, 1.3)
        g = gyro_amp * subject_gain * rng.uniform(0.7, 1.3)
        body = a * np.sin(2 * np.pi * f * t + phase) + 0.3 * a * np.sin(4 * np.pi * f * t + 2 * phase)
        out[:, axis] = body + rng.normal(0, 0.02, WINDOW_LENGTH)
        out[:, 3 + axis] = g * np.cos(2 * np.pi * f * t + phase) + rng.normal(0, 0.03, WINDOW_LENGTH)
        tilt = gravity[axis] + rng.normal(0, 0.04)
        out[:, 6 + axis] = out[:, axis] + tilt
    return out


def _split(subjects, per_subject: int, rng: np.random.Generator):
    windows, labels, subj = [], [], []
    for s in subjects:
        gain = rng.uniform(0.8, 1.2)
        for i in range(per_subject):
            label = (i + s) % 6
            windows.append(_window(label, gain, rng))
            labels.append(label)
            subj.append(s)
    return np.array(windows), np.array(labels), np.array(subj)


def _features(windows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    raw = feature_matrix(windows, FeatureCatalog.default())
    z = (raw - raw.mean(axis=0)) / np.where(raw.std(axis=0) > 0, raw.std(axis=0), 1.0)
    proj = rng.standard_normal((raw.shape[1], N_FEATURES)) / np.sqrt(raw.shape[1])
    return np.tanh(z @ proj)


def _write(path: Path, rows: np.ndarray, integer: bool = False) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if integer:
        text = "\n".join(str(int(v)) for v in rows)
    else:
        text = "\n".join(" ".join(f"{v: .7e}" for v in row) for row in rows)
    path.write_text(text + "\n", encoding="ascii")


def make_release(root, n_train: int, n_test: int, seed: int = 0,
                 train_subjects=TRAIN_SUBJECTS, test_subjects=TEST_SUBJECTS) -> Path:
    """Write a synthetic release with roughly ``n_train``/``n_test`` windows.

    Sizes are rounded up to a whole number of windows per subject.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    per_train = -(-n_train // len(train_subjects))
    per_test = -(-n_test // len(test_subjects))
    parts = {
        "train": _split(train_subjects, per_train, rng),
        "test": _split(test_subjects, per_test, rng),
    }
    stacked = np.concatenate([parts["train"][0], parts["test"][0]])
    feats = _features(stacked, rng)
    n_tr = len(parts["train"][0])
    for name, (windows, labels, subj) in parts.items():
        f = feats[:n_tr] if name == "train" else feats[n_tr:]
        _write(root / name / f"X_{name}.txt", f)
        _write(root / name / f"y_{name}.txt", labels + 1, integer=True)
        _write(root / name / f"subject_{name}.txt", subj, integer=True)
        for c, ch in enumerate(CHANNELS):
            _write(root / name / "Inertial Signals" / f"{ch}_{name}.txt", windows[:, :, c])
    return root
