"""One-vs-all linear SVM on the release's 561 features.

Each class gets a binary hinge-loss classifier with an L2 penalty on the
weights (the bias is not penalized)::

    lam/2 * |w_c|^2 + mean_i max(0, 1 - y_ic * (w_c . x_i + b_c))

trained jointly by seeded minibatch stochastic subgradient descent with step
``eta0 / (1 + lam * eta0 * t)``. The returned weights are the average of the
iterates over the second half of training.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError
from .metrics import ConfusionMatrix, EvalReport


@dataclass(frozen=True)
class LinearOVAConfig:
    lam: float = 1e-4
    epochs: int = 40
    batch_size: int = 32
    eta0: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.lam <= 0 or self.eta0 <= 0:
            raise ConfigError("lam and eta0 must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")


@dataclass
class LinearOVA:
    weights: np.ndarray  # [d, classes]
    bias: np.ndarray  # [classes]

    def scores(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.scores(x), axis=1)


def _signs(y: np.ndarray, classes: int) -> np.ndarray:
    s = -np.ones((len(y), classes))
    s[np.arange(len(y)), y] = 1.0
    return s


def hinge_losses(model: LinearOVA, x, y, classes: int | None = None) -> np.ndarray:
    """Mean hinge loss of each binary classifier."""
    classes = classes or model.weights.shape[1]
    margins = _signs(np.asarray(y), classes) * model.scores(x)
    return np.maximum(0.0, 1.0 - margins).mean(axis=0)


def objectives(model: LinearOVA, x, y, lam: float) -> np.ndarray:
    return 0.5 * lam * np.sum(model.weights**2, axis=0) + hinge_losses(model, x, y)


def fit_linear_ova(x, y, classes: int, config: LinearOVAConfig = LinearOVAConfig()) -> LinearOVA:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, d = x.shape
    signs = _signs(y, classes)
    w = np.zeros((d, classes))
    b = np.zeros(classes)
    w_avg, b_avg, averaged = np.zeros_like(w), np.zeros_like(b), 0
    start_avg = config.epochs // 2
    rng = np.random.default_rng(config.seed)
    t = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for s in range(0, n, config.batch_size):
            idx = order[s : s + config.batch_size]
            eta = config.eta0 / (1.0 + config.lam * config.eta0 * t)
            ys = signs[idx]
            active = (ys * (x[idx] @ w + b) < 1.0) * ys  # [B, classes], -dloss/dscore
            w -= eta * (config.lam * w - x[idx].T @ active / len(idx))
            b += eta * active.sum(axis=0) / len(idx)
            t += 1
            if epoch >= start_avg:
                averaged += 1
                w_avg += (w - w_avg) / averaged
                b_avg += (b - b_avg) / averaged
    return LinearOVA(w_avg, b_avg)


def train_linear_ova(dataset: Dataset, config: LinearOVAConfig = LinearOVAConfig()) -> tuple[LinearOVA, EvalReport]:
    """Fit on the official training features and evaluate on the test split."""
    classes = 6
    model = fit_linear_ova(dataset.train.features, dataset.train.labels, classes, config)
    pred = model.predict(dataset.test.features)
    report = EvalReport(
        ConfusionMatrix.from_predictions(dataset.test.labels, pred, classes),
        {"model": "linear-ova", "baseline_config": asdict(config)},
    )
    return model, report
