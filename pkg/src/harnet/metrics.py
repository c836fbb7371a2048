"""Confusion matrices and evaluation reports."""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CLASS_NAMES

REPORT_SCHEMA = "harnet.report/1"


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are actual classes, columns predicted, both in ``CLASS_NAMES`` order."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {c.shape}")
        if not np.issubdtype(c.dtype, np.integer):
            if np.any(c != np.round(c)):
                raise ValueError("confusion counts must be integers")
            c = c.astype(np.int64)
        if np.any(c < 0):
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @classmethod
    def from_predictions(cls, actual, predicted, classes: int = len(CLASS_NAMES)) -> "ConfusionMatrix":
        actual = np.asarray(actual, dtype=np.int64)
        predicted = np.asarray(predicted, dtype=np.int64)
        if actual.shape != predicted.shape:
            raise ValueError("actual and predicted must have the same length")
        counts = np.bincount(actual * classes + predicted, minlength=classes * classes)
        return cls(counts.reshape(classes, classes))

    @property
    def classes(self) -> int:
        return self.counts.shape[0]

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def row_sums(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.counts.sum(axis=1))

    def precision(self) -> list[float]:
        col = self.counts.sum(axis=0)
        diag = np.diag(self.counts)
        return [float(d / c) if c else 0.0 for d, c in zip(diag, col)]

    def recall(self) -> list[float]:
        row = self.counts.sum(axis=1)
        diag = np.diag(self.counts)
        return [float(d / r) if r else 0.0 for d, r in zip(diag, row)]

    def format_table(self, names=CLASS_NAMES) -> str:
        """Aligned text table with actual classes as rows and predictions as columns."""
        names = list(names)[: self.classes]
        first = max(len("Actual Class"), *(len(n) for n in names))
        widths = [max(len(n), len(str(self.counts[:, j].max()))) for j, n in enumerate(names)]
        lines = [
            " " * first + "  Predicted Class",
            "Actual Class".ljust(first) + "  " + "  ".join(n.rjust(w) for n, w in zip(names, widths)),
        ]
        for i, n in enumerate(names):
            lines.append(n.ljust(first) + "  " + "  ".join(str(v).rjust(w) for v, w in zip(self.counts[i], widths)))
        return "\n".join(lines)


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    meta: dict = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.confusion.accuracy

    @property
    def correct(self) -> int:
        return self.confusion.correct

    @property
    def total(self) -> int:
        return self.confusion.total

    @property
    def precision(self) -> list[float]:
        return self.confusion.precision()

    @property
    def recall(self) -> list[float]:
        return self.confusion.recall()

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "accuracy": self.accuracy,
            "correct": self.correct,
            "total": self.total,
            "classes": list(CLASS_NAMES[: self.confusion.classes]),
            "confusion": self.confusion.counts.tolist(),
            "precision": self.precision,
            "recall": self.recall,
            **self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"not a {REPORT_SCHEMA} document")
        skip = {"schema", "accuracy", "correct", "total", "classes", "confusion", "precision", "recall"}
        return cls(ConfusionMatrix(np.array(d["confusion"])), {k: v for k, v in d.items() if k not in skip})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self) -> str:
        return f"accuracy {100 * self.accuracy:.2f}% ({self.correct}/{self.total})"


def build_stamp() -> dict:
    """Package version plus the git commit of the working tree, when there is one."""
    from . import __version__

    stamp = {"version": __version__, "git": "unknown"}
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            stamp["git"] = out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return stamp
