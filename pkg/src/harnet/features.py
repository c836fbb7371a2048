"""Hand-crafted features for fusion.

Two sources: the release's 561 precomputed features (the default), or a
smaller regenerated catalog of 13 statistics per channel computed from the
raw windows. The regenerated set is NOT equivalent to the 561 features; it
exists so the pipeline can run without them and to exercise the spectral path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import CHANNELS, N_FEATURES, SAMPLING_HZ, LabeledExample, Split
from .errors import ConfigError, LengthError

KINDS = (
    "mean", "std", "mad", "min", "max", "energy", "iqr", "entropy", "autocorr_lag1",
    "dominant_freq_hz", "spectral_energy", "spectral_entropy", "mean_freq_hz",
)
FUSION_MODES = ("dataset561", "regenerated", "none")
CATALOG_FORMAT = "harnet.feature-catalog"
CATALOG_VERSION = 1
HIST_BINS = 16


# ---------------------------------------------------------------------------
# radix-2 FFT
# ---------------------------------------------------------------------------


def _check_pow2(n: int) -> None:
    if n < 1 or n & (n - 1):
        raise LengthError(f"signal length {n} is not a power of two")


def _bit_reverse_order(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(x) -> np.ndarray:
    """Iterative decimation-in-time FFT over the last axis.

    The working buffer is permuted into bit-reversed order once, then every
    butterfly stage overwrites it in place.
    """
    a = np.asarray(x, dtype=np.complex128)
    n = a.shape[-1]
    _check_pow2(n)
    a = a[..., _bit_reverse_order(n)].copy()
    lead = a.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(lead + (n // size, size))
        top = blocks[..., :half].copy()
        bottom = blocks[..., half:] * twiddle
        blocks[..., :half] = top + bottom
        blocks[..., half:] = top - bottom
        size *= 2
    return a


def dft_magnitude(signal) -> np.ndarray:
    """``|X_k|`` for bins ``0..N/2`` (last axis)."""
    x = np.asarray(signal, dtype=np.float64)
    n = x.shape[-1]
    return np.abs(fft_radix2(x)[..., : n // 2 + 1])


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureEntry:
    name: str
    channel: str
    kind: str


@dataclass(frozen=True)
class FeatureCatalog:
    entries: tuple[FeatureEntry, ...]

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ConfigError("feature names must be unique")
        for e in self.entries:
            if e.kind not in KINDS:
                raise ConfigError(f"unknown feature kind {e.kind!r}")
            if e.channel not in CHANNELS:
                raise ConfigError(f"unknown channel {e.channel!r}")

    @classmethod
    def default(cls) -> "FeatureCatalog":
        return cls.build(CHANNELS, KINDS)

    @classmethod
    def build(cls, channels: Iterable[str], kinds: Iterable[str]) -> "FeatureCatalog":
        kinds = list(kinds)
        return cls(tuple(FeatureEntry(f"{ch}.{k}", ch, k) for ch in channels for k in kinds))

    def __len__(self) -> int:
        return len(self.entries)

    def to_json(self) -> str:
        doc = {
            "format": CATALOG_FORMAT,
            "version": CATALOG_VERSION,
            "entries": [{"name": e.name, "channel": e.channel, "kind": e.kind} for e in self.entries],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FeatureCatalog":
        doc = json.loads(text)
        if doc.get("format") != CATALOG_FORMAT:
            raise ConfigError("not a feature catalog document")
        if doc.get("version") != CATALOG_VERSION:
            raise ConfigError(f"unsupported catalog version {doc.get('version')}")
        return cls(tuple(FeatureEntry(e["name"], e["channel"], e["kind"]) for e in doc["entries"]))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def fusion_digest(mode: str) -> str:
    """Identifies the fused feature block a model was trained against."""
    if mode == "regenerated":
        return FeatureCatalog.default().digest()
    if mode == "dataset561":
        return hashlib.sha256(f"uci-har-release-features/{N_FEATURES}".encode()).hexdigest()
    if mode == "none":
        return hashlib.sha256(b"no-fusion").hexdigest()
    raise ConfigError(f"unknown fusion mode {mode!r}")


def fusion_width(mode: str) -> int:
    if mode == "dataset561":
        return N_FEATURES
    if mode == "regenerated":
        return len(FeatureCatalog.default())
    if mode == "none":
        return 0
    raise ConfigError(f"unknown fusion mode {mode!r}")


# ---------------------------------------------------------------------------
# statistics (vectorized over rows of [rows, n] signals)
# ---------------------------------------------------------------------------


def _constant(x):
    return x.max(axis=-1) == x.min(axis=-1)


def _std(x):
    return np.where(_constant(x), 0.0, x.std(axis=-1))


def _mad(x):
    med = np.median(x, axis=-1, keepdims=True)
    return np.median(np.abs(x - med), axis=-1)


def _iqr(x):
    q75, q25 = np.percentile(x, [75, 25], axis=-1)
    return q75 - q25


def _entropy(x):
    lo, hi = x.min(axis=-1, keepdims=True), x.max(axis=-1, keepdims=True)
    width = hi - lo
    safe = np.where(width > 0, width, 1.0)
    bins = np.clip(np.floor((x - lo) / safe * HIST_BINS), 0, HIST_BINS - 1).astype(np.intp)
    counts = (bins[..., None] == np.arange(HIST_BINS)).sum(axis=-2)
    p = counts / x.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=-1)
    return np.where(width[..., 0] > 0, h, 0.0)


def _autocorr1(x):
    a, b = x[..., :-1], x[..., 1:]
    degenerate = _constant(a) | _constant(b)
    da = a - a.mean(axis=-1, keepdims=True)
    db = b - b.mean(axis=-1, keepdims=True)
    num = (da * db).sum(axis=-1)
    den = np.sqrt((da * da).sum(axis=-1) * (db * db).sum(axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num / den
    return np.where(degenerate, 0.0, r), degenerate


def _spectral(mag, n):
    """Features from one-sided magnitudes ``mag [..., n/2+1]``."""
    ac = mag[..., 1:]
    freqs = np.arange(1, mag.shape[-1]) * SAMPLING_HZ / n
    total = ac.sum(axis=-1)
    degenerate = total == 0.0
    power = ac * ac
    psum = power.sum(axis=-1, keepdims=True)
    p = power / np.where(psum > 0, psum, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        sent = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=-1)
    dominant = freqs[np.argmax(ac, axis=-1)]
    meanf = (ac * freqs).sum(axis=-1) / np.where(degenerate, 1.0, total)
    return {
        "dominant_freq_hz": np.where(degenerate, 0.0, dominant),
        "spectral_energy": (mag * mag).sum(axis=-1) / n,
        "spectral_entropy": np.where(degenerate, 0.0, sent),
        "mean_freq_hz": np.where(degenerate, 0.0, meanf),
    }, degenerate


_SPECTRAL = ("dominant_freq_hz", "spectral_energy", "spectral_entropy", "mean_freq_hz")
_FLAGGABLE = {"autocorr_lag1", "dominant_freq_hz", "spectral_entropy", "mean_freq_hz"}


def _kind_values(signals: np.ndarray, kinds: set[str]) -> tuple[dict, dict]:
    """signals ``[..., n]`` -> ({kind: values [...]}, {kind: degenerate mask})."""
    out, flags = {}, {}
    simple = {
        "mean": lambda x: x.mean(axis=-1),
        "std": _std,
        "mad": _mad,
        "min": lambda x: x.min(axis=-1),
        "max": lambda x: x.max(axis=-1),
        "energy": lambda x: (x * x).mean(axis=-1),
        "iqr": _iqr,
        "entropy": _entropy,
    }
    for k, fn in simple.items():
        if k in kinds:
            out[k] = fn(signals)
    if "autocorr_lag1" in kinds:
        out["autocorr_lag1"], flags["autocorr_lag1"] = _autocorr1(signals)
    if kinds & set(_SPECTRAL):
        spec, degenerate = _spectral(dft_magnitude(signals), signals.shape[-1])
        for k in _SPECTRAL:
            if k in kinds:
                out[k] = spec[k]
                if k in _FLAGGABLE:
                    flags[k] = degenerate
    return out, flags


def feature_matrix(windows: np.ndarray, catalog: FeatureCatalog, flags: list | None = None) -> np.ndarray:
    """Catalog features for ``windows [n, 128, 9]`` -> ``[n, len(catalog)]``.

    Degenerate statistics (constant signal for autocorrelation, empty
    non-DC spectrum for the frequency summaries) are defined as 0; when
    ``flags`` is a list, ``(row, feature name)`` pairs are appended to it.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[-1] != len(CHANNELS):
        raise ValueError(f"expected windows [n, length, {len(CHANNELS)}], got {windows.shape}")
    signals = windows.transpose(0, 2, 1)  # [n, channel, time]
    values, masks = _kind_values(signals, {e.kind for e in catalog.entries})
    ch_index = {c: i for i, c in enumerate(CHANNELS)}
    out = np.empty((windows.shape[0], len(catalog)))
    for j, e in enumerate(catalog.entries):
        c = ch_index[e.channel]
        out[:, j] = values[e.kind][:, c]
        if flags is not None and e.kind in masks:
            flags.extend((int(r), e.name) for r in np.flatnonzero(masks[e.kind][:, c]))
    return out


def extract_features(window, catalog: FeatureCatalog, flags: list | None = None) -> list[float]:
    """One window ``[128, 9]`` -> one value per catalog entry, in catalog order.

    ``flags`` (if given) collects the names of entries that hit a degenerate case.
    """
    rows: list = []
    vals = feature_matrix(np.asarray(window)[None], catalog, rows)
    if flags is not None:
        flags.extend(name for _, name in rows)
    return vals[0].tolist()


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std


def fit_feature_stats(split: Split, catalog: FeatureCatalog | None = None) -> FeatureStats:
    """Standardization statistics of the regenerated catalog on a (training) split."""
    catalog = catalog or FeatureCatalog.default()
    values = feature_matrix(split.windows, catalog)
    std = values.std(axis=0)
    # constant features map to 0 rather than dividing by zero
    return FeatureStats(values.mean(axis=0), np.where(std > 0, std, 1.0))


def fusion_matrix(split: Split, mode: str, stats: FeatureStats | None = None) -> np.ndarray:
    """Fused feature block for a whole split: ``[n, fusion_width(mode)]``."""
    if mode == "dataset561":
        return np.ascontiguousarray(split.features, dtype=np.float64)
    if mode == "none":
        return np.zeros((len(split), 0))
    if mode == "regenerated":
        if stats is None:
            raise ValueError("regenerated fusion needs training-set feature statistics")
        return stats.apply(feature_matrix(split.windows, FeatureCatalog.default()))
    raise ConfigError(f"unknown fusion mode {mode!r}")


def fusion_features(example: LabeledExample, mode: str, stats: FeatureStats | None = None) -> list[float]:
    if mode == "dataset561":
        return np.asarray(example.features, dtype=np.float64).tolist()
    if mode == "none":
        return []
    if mode == "regenerated":
        if stats is None:
            raise ValueError("regenerated fusion needs training-set feature statistics")
        raw = np.array(extract_features(example.window, FeatureCatalog.default()))
        return stats.apply(raw).tolist()
    raise ConfigError(f"unknown fusion mode {mode!r}")
