"""HAR-Net: multi-scale 1-D convolution stages, feature fusion, dense head.

Per stage, every kernel size in ``kernel_sizes`` convolves the incoming maps
(same padding), the branch outputs are concatenated on the maps axis and the
result is max pooled along time. In ``separable`` mode each of the 9 sensor
streams is processed on its own with weights shared by all streams; in
``conventional`` mode the streams are folded into the maps axis and every
filter sums over all of them. After the last stage the activations are
flattened, the fused feature block is appended, and the head is
dense(relu) -> dense(tanh) -> dense(logits).

Batches are processed in fixed-size chunks (the last one zero padded) so a
given example always meets BLAS in the same matrix shapes; that is what
makes predictions bit-identical however the batch is split.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import checkpoint as ckpt_io
from . import nn
from .data import CHANNELS, WINDOW_LENGTH, ChannelStats, Split, apply_channel_stats, model_layout
from .errors import CheckpointError, ConfigError, ContractError, FusionContractError, NumericError, ShapeError
from .features import FUSION_MODES, FeatureStats, fusion_digest, fusion_matrix, fusion_width
from .tensor import as_array

CONV_MODES = ("separable", "conventional")
DEFAULT_KERNELS = (1, 5, 9, 13, 17, 21, 25, 29, 33)
CHECKPOINT_FORMAT = "harnet/1"


@dataclass(frozen=True)
class HarNetConfig:
    kernel_sizes: tuple[int, ...] = DEFAULT_KERNELS
    stages: int = 4
    filters_per_branch: int = 4
    pool_window: int = 11
    pool_stride: int = 2
    pool_padding: str = "same"
    conv_mode: str = "separable"
    fusion_mode: str = "dataset561"
    share_across_streams: bool = True
    normalize_windows: bool = True
    fc1_units: int = 2048
    fc2_units: int = 64
    classes: int = 6
    streams: int = len(CHANNELS)
    length: int = WINDOW_LENGTH

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        self.validate()

    def validate(self) -> None:
        ks = self.kernel_sizes
        if not ks:
            raise ConfigError("kernel_sizes must not be empty")
        if any(k < 1 or k % 2 == 0 for k in ks):
            raise ConfigError(f"kernel sizes must be positive and odd, got {ks}")
        if len(set(ks)) != len(ks):
            raise ConfigError(f"kernel sizes must be distinct, got {ks}")
        for name in ("stages", "filters_per_branch", "pool_window", "pool_stride",
                     "fc1_units", "fc2_units", "classes", "streams", "length"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.conv_mode not in CONV_MODES:
            raise ConfigError(f"conv_mode must be one of {CONV_MODES}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.pool_padding not in nn.PADDINGS:
            raise ConfigError(f"pool_padding must be one of {nn.PADDINGS}")
        if self.conv_mode == "conventional" and not self.share_across_streams:
            raise ConfigError("share_across_streams=False only applies to separable mode")
        self.stage_lengths()

    # -- shape arithmetic ---------------------------------------------------

    @property
    def branches(self) -> int:
        return len(self.kernel_sizes)

    @property
    def maps_per_stage(self) -> int:
        return self.branches * self.filters_per_branch

    @property
    def conv_streams(self) -> int:
        """Independent streams seen by the conv stages."""
        return self.streams if self.conv_mode == "separable" else 1

    @property
    def input_maps(self) -> int:
        return 1 if self.conv_mode == "separable" else self.streams

    def stage_lengths(self) -> list[int]:
        """Signal length entering each stage, then the final length."""
        lengths = [self.length]
        for s in range(self.stages):
            cur = lengths[-1]
            if self.pool_padding == "valid" and self.pool_window > cur:
                raise ConfigError(f"pooling collapses the signal before stage {s + 1} finishes (length {cur})")
            _, _, out = nn.pool_geometry(cur, self.pool_window, self.pool_stride, self.pool_padding)
            if out < 1:
                raise ConfigError(f"pooling reaches length 0 at stage {s + 1}")
            lengths.append(out)
        return lengths

    @property
    def flatten_length(self) -> int:
        return self.conv_streams * self.maps_per_stage * self.stage_lengths()[-1]

    @property
    def fusion_width(self) -> int:
        return fusion_width(self.fusion_mode)

    @property
    def fc1_inputs(self) -> int:
        return self.flatten_length + self.fusion_width

    def shape_ledger(self) -> list[dict]:
        lengths = self.stage_lengths()
        rows = []
        maps_in = self.input_maps
        for s in range(self.stages):
            rows.append({
                "stage": s + 1,
                "streams": self.conv_streams,
                "maps_in": maps_in,
                "maps_out": self.maps_per_stage,
                "length_in": lengths[s],
                "length_out": lengths[s + 1],
            })
            maps_in = self.maps_per_stage
        return rows

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HarNetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def param_shapes(config: HarNetConfig) -> dict[str, tuple[int, ...]]:
    """Every trainable tensor's path and shape, in initialization order."""
    shapes = {}
    f = config.filters_per_branch
    maps_in = config.input_maps
    per_stream = config.conv_mode == "separable" and not config.share_across_streams
    for s in range(1, config.stages + 1):
        for k in config.kernel_sizes:
            w = (f, maps_in, k)
            shapes[f"stage{s}/k{k}/w"] = (config.streams,) + w if per_stream else w
            shapes[f"stage{s}/k{k}/b"] = (config.streams, f) if per_stream else (f,)
        maps_in = config.maps_per_stage
    shapes["fc1/w"] = (config.fc1_inputs, config.fc1_units)
    shapes["fc1/b"] = (config.fc1_units,)
    shapes["fc2/w"] = (config.fc1_units, config.fc2_units)
    shapes["fc2/b"] = (config.fc2_units,)
    shapes["out/w"] = (config.fc2_units, config.classes)
    shapes["out/b"] = (config.classes,)
    return shapes


def param_count(config: HarNetConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(config).values())


def _init_std(path: str, shape: tuple[int, ...]) -> float:
    # convolutions are linear (no activation follows), so their fan-in scaling
    # keeps unit variance; max pooling still inflates the scale stage by stage,
    # so fc1 uses the same variance-preserving factor rather than the relu gain
    if path.startswith("stage"):
        _, maps_in, k = shape[-3:]
        return math.sqrt(1.0 / (maps_in * k))
    fan_in = shape[0]
    if path.startswith(("fc1", "fc2")):
        return math.sqrt(1.0 / fan_in)
    # output layer: small so the untrained network predicts ~uniformly
    return 0.1 * math.sqrt(1.0 / fan_in)


@dataclass
class _ChunkCache:
    stage_inputs: list = field(default_factory=list)
    pool_index: list = field(default_factory=list)
    conv_lengths: list = field(default_factory=list)
    z: np.ndarray = None
    a1: np.ndarray = None
    h1: np.ndarray = None
    a2: np.ndarray = None
    h2: np.ndarray = None
    rows: int = 0


class HarNet:
    def __init__(self, config: HarNetConfig, params: dict[str, nn.ParamTensor], seed: int = 0):
        expected = param_shapes(config)
        if list(params) != list(expected):
            raise ContractError("parameter set does not match the config")
        for path, shape in expected.items():
            if params[path].shape != shape:
                raise ShapeError(f"{path}: shape {params[path].shape} != {shape}")
        self.config = config
        self.params = params
        self.seed = seed
        self.chunk = 16
        self.preprocessing: dict[str, np.ndarray] = {}
        self.max_activation = 0.0

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, config: HarNetConfig, seed: int) -> "HarNet":
        rng = np.random.default_rng(seed)
        params = {}
        for path, shape in param_shapes(config).items():
            if path.endswith("/b"):
                value = np.zeros(shape)
            else:
                value = rng.standard_normal(shape) * _init_std(path, shape)
            params[path] = nn.ParamTensor(path, value)
        return cls(config, params, seed)

    def parameters(self) -> list[nn.ParamTensor]:
        return list(self.params.values())

    @property
    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- stages ---------------------------------------------------------------

    def _stage_weights(self, s: int):
        ks = self.config.kernel_sizes
        return ([self.params[f"stage{s}/k{k}/w"].value for k in ks],
                [self.params[f"stage{s}/k{k}/b"].value for k in ks])

    def _per_stream(self) -> bool:
        return self.config.conv_mode == "separable" and not self.config.share_across_streams

    def _conv(self, s: int, h: np.ndarray) -> np.ndarray:
        ws, bs = self._stage_weights(s)
        if not self._per_stream():
            return nn.multi_conv_cl(h, ws, bs)
        st = self.config.streams
        hs = h.reshape(-1, st, *h.shape[1:])
        outs = [nn.multi_conv_cl(hs[:, j], [w[j] for w in ws], [b[j] for b in bs]) for j in range(st)]
        return np.stack(outs, axis=1).reshape(h.shape[0], h.shape[1], -1)

    def _conv_backward(self, s: int, dout: np.ndarray, h: np.ndarray) -> np.ndarray:
        ws, _ = self._stage_weights(s)
        ks = self.config.kernel_sizes
        if not self._per_stream():
            dh, dws, dbs = nn.multi_conv_cl_backward(dout, h, ws)
            for k, dw, db in zip(ks, dws, dbs):
                self.params[f"stage{s}/k{k}/w"].grad += dw
                self.params[f"stage{s}/k{k}/b"].grad += db
            return dh
        st = self.config.streams
        hs = h.reshape(-1, st, *h.shape[1:])
        ds = dout.reshape(-1, st, *dout.shape[1:])
        dh = np.empty_like(hs)
        for j in range(st):
            dh[:, j], dws, dbs = nn.multi_conv_cl_backward(ds[:, j], hs[:, j], [w[j] for w in ws])
            for k, dw, db in zip(ks, dws, dbs):
                self.params[f"stage{s}/k{k}/w"].grad[j] += dw
                self.params[f"stage{s}/k{k}/b"].grad[j] += db
        return dh.reshape(h.shape)

    # -- forward / backward on one chunk --------------------------------------

    def _to_rows(self, x: np.ndarray) -> np.ndarray:
        """[c, streams, maps, L] -> channels-last rows [c*conv_streams, L, maps]."""
        c, st, m, length = x.shape
        if self.config.conv_mode == "separable":
            return np.ascontiguousarray(x.reshape(c * st, m, length).transpose(0, 2, 1))
        return np.ascontiguousarray(x.reshape(c, st * m, length).transpose(0, 2, 1))

    def _forward_chunk(self, x: np.ndarray, fused: np.ndarray, cache: _ChunkCache | None):
        cfg = self.config
        c = x.shape[0]
        h = self._to_rows(x)
        peak = 0.0
        for s in range(1, cfg.stages + 1):
            conv = self._conv(s, h)
            pooled, idx = nn.maxpool1d_with_argmax(conv, cfg.pool_window, cfg.pool_stride, cfg.pool_padding, axis=1)
            if cache is not None:
                cache.stage_inputs.append(h)
                cache.pool_index.append(idx)
                cache.conv_lengths.append(conv.shape[1])
            peak = max(peak, float(np.abs(conv).max()))
            h = pooled
        # flatten each example as [stream, map, time]
        rows, lf, m = h.shape
        flat = h.reshape(c, rows // c, lf, m).transpose(0, 1, 3, 2).reshape(c, -1)
        z = np.concatenate([flat, fused], axis=1)
        a1 = nn.dense(z, self.params["fc1/w"].value, self.params["fc1/b"].value)
        h1 = nn.relu(a1)
        a2 = nn.dense(h1, self.params["fc2/w"].value, self.params["fc2/b"].value)
        h2 = nn.tanh(a2)
        logits = nn.dense(h2, self.params["out/w"].value, self.params["out/b"].value)
        peak = max(peak, float(np.abs(a1).max()), float(np.abs(logits).max()))
        self.max_activation = max(self.max_activation, peak)
        if cache is not None:
            cache.z, cache.a1, cache.h1, cache.a2, cache.h2 = z, a1, h1, a2, h2
            cache.rows = rows
        return logits

    def _backward_chunk(self, dlogits: np.ndarray, cache: _ChunkCache) -> np.ndarray:
        cfg = self.config
        p = self.params
        dh2, dw, db = nn.dense_backward(dlogits, cache.h2, p["out/w"].value)
        p["out/w"].grad += dw
        p["out/b"].grad += db
        da2 = nn.tanh_backward(dh2, cache.h2)
        dh1, dw, db = nn.dense_backward(da2, cache.h1, p["fc2/w"].value)
        p["fc2/w"].grad += dw
        p["fc2/b"].grad += db
        da1 = nn.relu_backward(dh1, cache.a1)
        dz, dw, db = nn.dense_backward(da1, cache.z, p["fc1/w"].value)
        p["fc1/w"].grad += dw
        p["fc1/b"].grad += db

        c = dz.shape[0]
        lf = cfg.stage_lengths()[-1]
        m = cfg.maps_per_stage
        dflat = dz[:, : cfg.flatten_length]
        dh = dflat.reshape(c, cache.rows // c, m, lf).transpose(0, 1, 3, 2).reshape(cache.rows, lf, m)
        for s in range(cfg.stages, 0, -1):
            dconv = nn.maxpool1d_backward(
                dh, cache.pool_index[s - 1], cache.conv_lengths[s - 1],
                cfg.pool_window, cfg.pool_stride, cfg.pool_padding, axis=1,
            )
            dh = self._conv_backward(s, dconv, cache.stage_inputs[s - 1])
        # rows are [c*streams, L, 1] (separable) or [c, L, streams]; both map back to [c, streams, 1, L]
        return np.ascontiguousarray(dh.transpose(0, 2, 1)).reshape(c, cfg.streams, 1, cfg.length)

    # -- batch API --------------------------------------------------------------

    def _check_inputs(self, windows, fused) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        x = as_array(windows)
        if x.ndim != 4 or x.shape[1] != cfg.streams or x.shape[3] != cfg.length:
            raise ShapeError(f"windows must be [batch, {cfg.streams}, maps, {cfg.length}], got {x.shape}")
        if x.shape[2] != 1:
            raise ShapeError(f"expected one input map per stream, got {x.shape[2]}")
        f = np.asarray(fused, dtype=np.float64)
        if f.ndim == 1 and f.size == 0:
            f = f.reshape(x.shape[0], 0)
        if f.ndim != 2 or f.shape[0] != x.shape[0]:
            raise ShapeError(f"fused features must be [batch, F], got {f.shape}")
        if f.shape[1] != cfg.fusion_width:
            raise FusionContractError(
                f"fused feature width {f.shape[1]} != {cfg.fusion_width} expected by fusion_mode={cfg.fusion_mode}"
            )
        return x, f

    def _chunks(self, x: np.ndarray, f: np.ndarray):
        n, c = x.shape[0], self.chunk
        for start in range(0, n, c):
            xc, fc = x[start : start + c], f[start : start + c]
            real = xc.shape[0]
            if real < c:
                xc = np.concatenate([xc, np.zeros((c - real,) + xc.shape[1:])])
                fc = np.concatenate([fc, np.zeros((c - real, fc.shape[1]))])
            yield start, real, xc, fc

    def forward(self, windows, fused) -> np.ndarray:
        """Logits ``[batch, classes]``."""
        x, f = self._check_inputs(windows, fused)
        out = np.empty((x.shape[0], self.config.classes))
        for start, real, xc, fc in self._chunks(x, f):
            out[start : start + real] = self._forward_chunk(xc, fc, None)[:real]
        return out

    def loss_and_backward(self, windows, fused, labels) -> tuple[float, np.ndarray]:
        """Mean cross-entropy; parameter gradients are overwritten (not accumulated).

        Returns ``(loss, d loss / d windows)``.
        """
        x, f = self._check_inputs(windows, fused)
        labels = np.asarray(labels)
        self.zero_grad()
        self.max_activation = 0.0
        logits = np.empty((x.shape[0], self.config.classes))
        caches = []
        for start, real, xc, fc in self._chunks(x, f):
            cache = _ChunkCache()
            logits[start : start + real] = self._forward_chunk(xc, fc, cache)[:real]
            caches.append((start, real, cache))
        loss, probs = nn.softmax_xent(logits, labels)
        if not math.isfinite(loss):
            return loss, None
        dlogits = nn.softmax_xent_backward(probs, labels)
        dx = np.empty_like(x)
        for start, real, cache in caches:
            d = np.zeros((self.chunk, self.config.classes))
            d[:real] = dlogits[start : start + real]
            dx[start : start + real] = self._backward_chunk(d, cache)[:real]
        return loss, dx

    def stage_outputs(self, windows) -> list[np.ndarray]:
        """Pooled activations after each stage, ``[batch, conv_streams, maps, length]``."""
        x = as_array(windows)
        c = x.shape[0]
        h = self._to_rows(x)
        outs = []
        for s in range(1, self.config.stages + 1):
            h = nn.maxpool1d(self._conv(s, h), self.config.pool_window, self.config.pool_stride,
                             self.config.pool_padding, axis=1)
            rows, length, m = h.shape
            outs.append(h.reshape(c, rows // c, length, m).transpose(0, 1, 3, 2).copy())
        return outs

    def loss(self, windows, fused, labels) -> float:
        return nn.softmax_xent(self.forward(windows, fused), labels)[0]

    def predict(self, windows, fused) -> tuple[np.ndarray, np.ndarray]:
        """(labels, probabilities); ties resolve to the lowest class index."""
        probs = nn.softmax(self.forward(windows, fused))
        return np.argmax(probs, axis=1), probs

    # -- preprocessing owned by the model ------------------------------------------

    def set_preprocessing(self, channels: ChannelStats | None, features: FeatureStats | None) -> None:
        self.preprocessing = {}
        if channels is not None:
            self.preprocessing["channel_mean"] = np.asarray(channels.mean, dtype=np.float64)
            self.preprocessing["channel_std"] = np.asarray(channels.std, dtype=np.float64)
        if features is not None:
            self.preprocessing["feature_mean"] = np.asarray(features.mean, dtype=np.float64)
            self.preprocessing["feature_std"] = np.asarray(features.std, dtype=np.float64)

    def feature_stats(self) -> FeatureStats | None:
        if "feature_mean" not in self.preprocessing:
            return None
        return FeatureStats(self.preprocessing["feature_mean"], self.preprocessing["feature_std"])

    def prepare_inputs(self, split: Split) -> tuple[np.ndarray, np.ndarray]:
        """Raw split -> (windows in model layout, fused features)."""
        windows = split.windows
        if self.config.normalize_windows:
            if "channel_mean" not in self.preprocessing:
                raise ContractError("model has no channel statistics for window normalization")
            stats = ChannelStats(self.preprocessing["channel_mean"], self.preprocessing["channel_std"])
            windows = apply_channel_stats(windows, stats)
        fused = fusion_matrix(split, self.config.fusion_mode, self.feature_stats())
        return model_layout(windows), fused

    # -- checkpoints --------------------------------------------------------------

    def to_checkpoint(self, meta: dict | None = None) -> ckpt_io.Checkpoint:
        tensors = {path: p.value for path, p in self.params.items()}
        tensors.update({f"prep/{k}": v for k, v in self.preprocessing.items()})
        info = {
            "format": CHECKPOINT_FORMAT,
            "fusion_digest": fusion_digest(self.config.fusion_mode),
            "parameter_count": self.parameter_count,
        }
        info.update(meta or {})
        return ckpt_io.Checkpoint(tensors, self.config.to_dict(), self.seed, info)

    def save(self, path, meta: dict | None = None) -> None:
        ckpt_io.save(path, self.to_checkpoint(meta))

    @classmethod
    def from_checkpoint(cls, ckpt: ckpt_io.Checkpoint, expected: HarNetConfig | None = None) -> "HarNet":
        if ckpt.meta.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"unknown checkpoint format {ckpt.meta.get('format')!r}")
        try:
            config = HarNetConfig.from_dict(ckpt.config)
        except (ConfigError, TypeError) as exc:
            raise CheckpointError(f"checkpoint config invalid: {exc}") from None
        if ckpt.meta.get("fusion_digest") != fusion_digest(config.fusion_mode):
            raise CheckpointError("feature catalog digest does not match this build")
        if expected is not None:
            check_config_match(config, expected)
        shapes = param_shapes(config)
        params = {}
        for path, shape in shapes.items():
            if path not in ckpt.tensors:
                raise CheckpointError(f"checkpoint lacks parameter {path}")
            if ckpt.tensors[path].shape != shape:
                raise CheckpointError(f"{path}: stored shape {ckpt.tensors[path].shape} != {shape}")
            params[path] = nn.ParamTensor(path, ckpt.tensors[path])
        model = cls(config, params, ckpt.seed)
        model.preprocessing = {k[5:]: v for k, v in ckpt.tensors.items() if k.startswith("prep/")}
        return model

    @classmethod
    def load(cls, path, expected: HarNetConfig | None = None) -> "HarNet":
        return cls.from_checkpoint(ckpt_io.load(path), expected)


def check_config_match(stored: HarNetConfig, runtime: HarNetConfig, keys=None) -> None:
    """Raise if ``runtime`` disagrees with a checkpoint's config on ``keys`` (all by default)."""
    a, b = stored.to_dict(), runtime.to_dict()
    keys = list(a) if keys is None else list(keys)
    if "fusion_mode" in keys and a["fusion_mode"] != b["fusion_mode"]:
        raise FusionContractError(
            f"checkpoint was trained with fusion_mode={a['fusion_mode']}, runtime asks for {b['fusion_mode']}"
        )
    diff = [k for k in keys if a[k] != b[k]]
    if diff:
        raise ContractError(f"checkpoint config differs from runtime config on: {', '.join(diff)}")


def finite_or_raise(loss: float, epoch: int, batch: int, model: HarNet) -> None:
    if not math.isfinite(loss):
        raise NumericError(
            f"non-finite loss at epoch {epoch} batch {batch} (max |activation| {model.max_activation:.3e})"
        )
