"""Layers with hand-written backward rules, Adam, and a finite-difference checker.

Each layer is a forward function plus a ``*_backward`` function. The network
is a fixed pipeline, so there is no tape: the model calls the backward rules
in reverse order itself.

Public conv/pool functions use the channels-first layout of the contracts
(``[..., maps, length]``). The model works channels-last (``[rows, length,
maps]``) through the ``*_cl`` helpers, which avoid a transpose per stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, LabelError, NumericError, ShapeError
from .tensor import as_array

PADDINGS = ("same", "valid")


def _check_padding(padding: str) -> None:
    if padding not in PADDINGS:
        raise ConfigError(f"padding must be one of {PADDINGS}, got {padding!r}")


# ---------------------------------------------------------------------------
# convolution core (channels-last, several kernel sizes at once)
# ---------------------------------------------------------------------------


class _TapPlan:
    """How a group of same-padded kernels maps onto one tap loop.

    Kernels are centred inside the widest one; tap ``t`` only touches the
    output columns of branches whose kernel covers ``t``.
    """

    def __init__(self, shapes: Sequence[tuple[int, int, int]], padding: str):
        _check_padding(padding)
        if not shapes:
            raise ShapeError("at least one kernel is required")
        maps_in = shapes[0][1]
        for f, m, k in shapes:
            if m != maps_in:
                raise ShapeError(f"kernels disagree on input maps: {m} vs {maps_in}")
            if k < 1 or f < 1:
                raise ShapeError(f"bad kernel shape {(f, m, k)}")
            if padding == "same" and k % 2 == 0:
                raise ConfigError(f"kernel size {k} is even; 'same' padding needs odd kernels")
        if padding == "valid" and len({k for _, _, k in shapes}) > 1:
            raise ConfigError("'valid' padding needs a single kernel size")
        self.padding = padding
        self.maps_in = maps_in
        self.kmax = max(k for _, _, k in shapes)
        self.sizes = [k for _, _, k in shapes]
        self.offsets = [(self.kmax - k) // 2 for k in self.sizes]
        self.cols = []
        c = 0
        for f, _, _ in shapes:
            self.cols.append((c, c + f))
            c += f
        self.f_total = c
        self.tap_cols = []
        for t in range(self.kmax):
            covering = [j for j, (o, k) in enumerate(zip(self.offsets, self.sizes)) if o <= t < o + k]
            self.tap_cols.append((self.cols[covering[0]][0], self.cols[covering[-1]][1]))

    def lengths(self, length: int) -> tuple[int, int, int]:
        """(left pad, zero gap between packed examples, output length)."""
        if self.padding == "same":
            left = (self.kmax - 1) // 2
            return left, max(left, self.kmax - 1 - left), length
        if self.kmax > length:
            raise ShapeError(f"kernel {self.kmax} longer than signal {length} with 'valid' padding")
        return 0, 0, length - self.kmax + 1

    def combine(self, weights: Sequence[np.ndarray]) -> np.ndarray:
        wc = np.zeros((self.kmax, self.maps_in, self.f_total))
        for w, o, k, (c0, c1) in zip(weights, self.offsets, self.sizes, self.cols):
            wc[o : o + k, :, c0:c1] = w.transpose(2, 1, 0)
        return wc

    def split(self, wc: np.ndarray) -> list[np.ndarray]:
        return [
            np.ascontiguousarray(wc[o : o + k, :, c0:c1].transpose(2, 1, 0))
            for o, k, (c0, c1) in zip(self.offsets, self.sizes, self.cols)
        ]


def _packed_rows(x: np.ndarray, left: int, gap: int, kmax: int) -> tuple[np.ndarray, int]:
    """Lay examples end to end, separated by ``gap`` zero rows.

    Neighbouring examples share one gap: the right padding of one example is
    the left padding of the next. Returns (buffer, row stride per example).
    """
    n, length, m = x.shape
    stride = length + gap
    buf = np.zeros((left + n * stride + kmax, m))
    buf[left : left + n * stride].reshape(n, stride, m)[:, :length] = x
    return buf, stride


def multi_conv_cl(x, weights: Sequence, biases: Sequence, padding: str = "same") -> np.ndarray:
    """Correlate ``x [rows, length, maps]`` with several kernels, concatenating outputs.

    ``weights[j]`` has shape ``[filters_j, maps, k_j]`` and ``biases[j]``
    ``[filters_j]``. Returns ``[rows, length_out, sum(filters_j)]``.

    All examples are packed into one buffer so each tap is a single
    contiguous matmul; output rows that fall in the gaps are dropped.
    """
    x = as_array(x)
    weights = [as_array(w) for w in weights]
    if x.ndim != 3:
        raise ShapeError(f"expected [rows, length, maps], got {x.shape}")
    plan = _TapPlan([w.shape for w in weights], padding)
    if x.shape[2] != plan.maps_in:
        raise ShapeError(f"input has {x.shape[2]} maps, kernels expect {plan.maps_in}")
    bias = np.concatenate([as_array(b).reshape(-1) for b in biases])
    if bias.shape != (plan.f_total,):
        raise ShapeError(f"bias length {bias.shape[0]} != filters {plan.f_total}")
    n, length, _ = x.shape
    left, gap, lout = plan.lengths(length)
    buf, stride = _packed_rows(x, left, gap, plan.kmax)
    wc = plan.combine(weights)
    r = n * stride
    out = np.zeros((r, plan.f_total))
    for t, (c0, c1) in enumerate(plan.tap_cols):
        out[:, c0:c1] += buf[t : t + r] @ wc[t, :, c0:c1]
    return out.reshape(n, stride, plan.f_total)[:, :lout] + bias


def multi_conv_cl_backward(dout, x, weights: Sequence, padding: str = "same"):
    """Gradients of :func:`multi_conv_cl`: ``(dx, [dw_j], [db_j])``."""
    x = as_array(x)
    dout = as_array(dout)
    weights = [as_array(w) for w in weights]
    plan = _TapPlan([w.shape for w in weights], padding)
    n, length, m = x.shape
    left, gap, lout = plan.lengths(length)
    if dout.shape != (n, lout, plan.f_total):
        raise ShapeError(f"upstream gradient {dout.shape} != {(n, lout, plan.f_total)}")
    buf, stride = _packed_rows(x, left, gap, plan.kmax)
    wc = plan.combine(weights)
    r = n * stride
    g = np.zeros((n, stride, plan.f_total))
    g[:, :lout] = dout
    g = g.reshape(r, plan.f_total)
    dwc = np.zeros_like(wc)
    dbuf = np.zeros_like(buf)
    for t, (c0, c1) in enumerate(plan.tap_cols):
        gt = g[:, c0:c1]
        dwc[t, :, c0:c1] = buf[t : t + r].T @ gt
        dbuf[t : t + r] += gt @ wc[t, :, c0:c1].T
    dx = np.ascontiguousarray(dbuf[left : left + r].reshape(n, stride, m)[:, :length])
    db_all = dout.sum(axis=(0, 1))
    dbs = [db_all[c0:c1].copy() for c0, c1 in plan.cols]
    return dx, plan.split(dwc), dbs


# ---------------------------------------------------------------------------
# public convolution ops (channels-first)
# ---------------------------------------------------------------------------


def _to_rows_cl(x: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    lead = x.shape[:-2]
    m, length = x.shape[-2:]
    rows = x.reshape(-1, m, length).transpose(0, 2, 1)
    return rows, lead


def _from_rows_cl(y: np.ndarray, lead: tuple[int, ...]) -> np.ndarray:
    return np.ascontiguousarray(y.transpose(0, 2, 1)).reshape(lead + (y.shape[2], y.shape[1]))


def _check_conv_args(x, w, b, min_rank, name):
    x, w, b = as_array(x), as_array(w), as_array(b)
    if x.ndim < min_rank:
        raise ShapeError(f"{name}: input rank {x.ndim} < {min_rank}")
    if w.ndim != 3:
        raise ShapeError(f"{name}: weights must be [filters, maps_in, kernel], got {w.shape}")
    if w.shape[1] != x.shape[-2]:
        raise ShapeError(f"{name}: weights expect {w.shape[1]} maps, input has {x.shape[-2]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"{name}: bias shape {b.shape} != ({w.shape[0]},)")
    return x, w, b


def conv1d_depthwise(x, w, b, padding: str = "same") -> np.ndarray:
    """Per-stream convolution with one weight tensor shared by every stream.

    ``x [..., streams, maps_in, length]``, ``w [filters, maps_in, kernel]`` ->
    ``[..., streams, filters, length_out]``. Streams never mix.
    """
    x, w, b = _check_conv_args(x, w, b, 3, "conv1d_depthwise")
    rows, lead = _to_rows_cl(x)
    return _from_rows_cl(multi_conv_cl(rows, [w], [b], padding), lead)


def conv1d_depthwise_backward(dout, x, w, padding: str = "same"):
    x, w = as_array(x), as_array(w)
    rows, lead = _to_rows_cl(x)
    drows, _ = _to_rows_cl(as_array(dout))
    dx, (dw,), (db,) = multi_conv_cl_backward(drows, rows, [w], padding)
    return _from_rows_cl(dx, lead), dw, db


def conv1d_standard(x, w, b, padding: str = "same") -> np.ndarray:
    """Ordinary convolution summing over all input maps.

    ``x [..., maps_in, length]`` -> ``[..., filters, length_out]``; leading
    axes (if any) are independent batch entries.
    """
    x, w, b = _check_conv_args(x, w, b, 2, "conv1d_standard")
    rows, lead = _to_rows_cl(x)
    return _from_rows_cl(multi_conv_cl(rows, [w], [b], padding), lead)


def conv1d_standard_backward(dout, x, w, padding: str = "same"):
    return conv1d_depthwise_backward(dout, x, w, padding)


# ---------------------------------------------------------------------------
# max pooling
# ---------------------------------------------------------------------------


def pool_geometry(length: int, window: int, stride: int, padding: str) -> tuple[int, int, int]:
    """(left pad, right pad, output length) for a pooling layer."""
    _check_padding(padding)
    if window < 1 or stride < 1:
        raise ConfigError(f"pool window and stride must be >= 1, got {window}, {stride}")
    if padding == "same":
        left = (window - 1) // 2
        return left, window - 1 - left, (length - 1) // stride + 1
    if window > length:
        raise ShapeError(f"pool window {window} longer than signal {length} with 'valid' padding")
    return 0, 0, (length - window) // stride + 1


def _axis_slice(ndim: int, axis: int, s: slice) -> tuple:
    index = [slice(None)] * ndim
    index[axis] = s
    return tuple(index)


def maxpool1d_with_argmax(x, window: int, stride: int, padding: str = "same", axis: int = -1):
    """Max pooling along ``axis``; also returns the winning offset in each window.

    Padding uses -inf so it never wins. Ties go to the first (lowest) index.
    """
    x = as_array(x)
    axis %= x.ndim
    length = x.shape[axis]
    left, right, lout = pool_geometry(length, window, stride, padding)
    if left or right:
        widths = [(0, 0)] * x.ndim
        widths[axis] = (left, right)
        xp = np.pad(x, widths, constant_values=-np.inf)
    else:
        xp = x
    span = stride * (lout - 1) + 1
    cands = [xp[_axis_slice(x.ndim, axis, slice(j, j + span, stride))] for j in range(window)]
    out = cands[0].copy()
    for cand in cands[1:]:
        np.maximum(out, cand, out=out)
    # walk offsets high to low so the lowest matching offset is written last
    idx = np.zeros(out.shape, dtype=np.intp)
    for j in range(window - 1, 0, -1):
        np.copyto(idx, j, where=cands[j] == out)
    np.copyto(idx, 0, where=cands[0] == out)
    return out, idx


def maxpool1d(x, window: int, stride: int, padding: str = "same", axis: int = -1) -> np.ndarray:
    return maxpool1d_with_argmax(x, window, stride, padding, axis)[0]


def maxpool1d_backward(dout, idx, length: int, window: int, stride: int, padding: str = "same", axis: int = -1):
    """Route each output gradient to its window's argmax."""
    dout = as_array(dout)
    axis %= dout.ndim
    left, right, lout = pool_geometry(length, window, stride, padding)
    shape = list(dout.shape)
    shape[axis] = length + left + right
    dxp = np.zeros(shape)
    span = stride * (lout - 1) + 1
    for j in range(window):
        view = dxp[_axis_slice(dout.ndim, axis, slice(j, j + span, stride))]
        np.add(view, dout, out=view, where=idx == j)
    return np.ascontiguousarray(dxp[_axis_slice(dout.ndim, axis, slice(left, left + length))])


# ---------------------------------------------------------------------------
# dense, activations, loss
# ---------------------------------------------------------------------------


def dense(x, w, b) -> np.ndarray:
    x, w, b = as_array(x), as_array(w), as_array(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: cannot apply weights {w.shape} to input {x.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias {b.shape} != ({w.shape[1]},)")
    return x @ w + b


def dense_backward(dout, x, w):
    dout, x, w = as_array(dout), as_array(x), as_array(w)
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def relu(x) -> np.ndarray:
    return np.maximum(as_array(x), 0.0)


def relu_backward(dout, x) -> np.ndarray:
    # relu'(0) = 0
    return np.where(as_array(x) > 0.0, as_array(dout), 0.0)


def tanh(x) -> np.ndarray:
    return np.tanh(as_array(x))


def tanh_backward(dout, y) -> np.ndarray:
    """Gradient through tanh given its *output* ``y``."""
    y = as_array(y)
    return as_array(dout) * (1.0 - y * y)


def activation(x, kind: str) -> np.ndarray:
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    raise ConfigError(f"unknown activation {kind!r}")


def activation_backward(dout, x, y, kind: str) -> np.ndarray:
    if kind == "relu":
        return relu_backward(dout, x)
    if kind == "tanh":
        return tanh_backward(dout, y)
    raise ConfigError(f"unknown activation {kind!r}")


def softmax(logits) -> np.ndarray:
    z = as_array(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(labels, batch: int, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise LabelError(f"expected {batch} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise LabelError(f"labels must be integers, got dtype {labels.dtype}")
    if batch and (labels.min() < 0 or labels.max() >= classes):
        raise LabelError(f"labels must lie in 0..{classes - 1}")
    return labels.astype(np.intp)


def softmax_xent(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and the softmax probabilities."""
    z = as_array(logits)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ShapeError(f"logits must be [batch>=1, classes], got {z.shape}")
    labels = _check_labels(labels, z.shape[0], z.shape[1])
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted[np.arange(len(labels)), labels] - logsum
    probs = np.exp(shifted - logsum[:, None])
    return float(-logp.mean()), probs


def softmax_xent_backward(probs, labels) -> np.ndarray:
    probs = as_array(probs)
    labels = _check_labels(labels, probs.shape[0], probs.shape[1])
    g = probs.copy()
    g[np.arange(len(labels)), labels] -= 1.0
    return g / probs.shape[0]


# ---------------------------------------------------------------------------
# parameters and Adam
# ---------------------------------------------------------------------------


@dataclass
class ParamTensor:
    """A trainable array with its gradient and Adam state."""

    path: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)
    adam_m: np.ndarray = field(default=None)
    adam_v: np.ndarray = field(default=None)
    step_count: int = 0

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.value)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.value)
        for name in ("grad", "adam_m", "adam_v"):
            if getattr(self, name).shape != self.value.shape:
                raise ShapeError(f"{self.path}: {name} shape differs from value shape")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def adam_step(
    params: Iterable[ParamTensor],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update (Kingma & Ba, Algorithm 1) on every parameter.

    Gradients are checked before anything is touched, so a non-finite
    gradient leaves all parameters and optimizer state unchanged.
    """
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {p.path}")
    for p in params:
        p.step_count += 1
        t = p.step_count
        g = p.grad
        buf = np.empty_like(g)  # one scratch array instead of a temporary per operation
        p.adam_m *= beta1
        np.multiply(g, 1.0 - beta1, out=buf)
        p.adam_m += buf
        p.adam_v *= beta2
        np.multiply(g, g, out=buf)
        buf *= 1.0 - beta2
        p.adam_v += buf
        # value -= lr * m_hat / (sqrt(v_hat) + eps)
        np.divide(p.adam_v, 1.0 - beta2**t, out=buf)
        np.sqrt(buf, out=buf)
        buf += eps
        np.divide(p.adam_m, buf, out=buf)
        buf *= lr / (1.0 - beta1**t)
        p.value -= buf


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradcheckReport:
    max_rel_error: float
    tolerance: float
    checked: int
    worst: tuple[str, tuple[int, ...]] | None
    refined: int = 0  # coordinates re-measured with a smaller step after a kink

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel_error={self.max_rel_error:.3e} tol={self.tolerance:.0e} "
                f"coords={self.checked} refined={self.refined}")


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps coordinates whose true gradient is ~0 from dividing
    finite-difference round-off by nothing.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(
    loss_and_grads: Callable[[], tuple[float, Mapping[str, np.ndarray]]],
    arrays: Mapping[str, np.ndarray],
    tolerance: float,
    samples: int = 100,
    h: float = 1e-5,
    seed: int = 0,
    loss_only: Callable[[], float] | None = None,
    min_h: float = 1e-7,
) -> GradcheckReport:
    """Compare reverse-mode gradients with central differences.

    ``loss_and_grads()`` must compute the loss (and gradients keyed like
    ``arrays``) from the current contents of ``arrays``; coordinates are
    perturbed in place and restored afterwards. At least ``samples``
    coordinates are drawn, spread over every array. ``loss_only``, when
    given, is used for the perturbed evaluations to skip the backward pass.

    Max pooling and relu make the loss piecewise smooth. A coordinate that
    misses ``tolerance`` while its forward and backward one-sided differences
    also disagree has ``[x - h, x + h]`` straddling a switch; it is measured
    again with a ten times smaller step, down to ``min_h``.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_and_grads()
    grads = {k: np.array(v, copy=True) for k, v in grads.items()}
    names = list(arrays)
    per_array = max(1, -(-samples // len(names)))
    picks = []
    for name in names:
        arr = arrays[name]
        n = min(per_array, arr.size)
        for flat in rng.choice(arr.size, size=n, replace=False):
            picks.append((name, np.unravel_index(int(flat), arr.shape)))
    if len(picks) < samples:
        # small arrays could not supply their share; top up from the largest
        name = max(names, key=lambda k: arrays[k].size)
        taken = {idx for nm, idx in picks if nm == name}
        pool = [i for i in range(arrays[name].size) if np.unravel_index(i, arrays[name].shape) not in taken]
        extra = rng.choice(pool, size=min(samples - len(picks), len(pool)), replace=False)
        picks += [(name, np.unravel_index(int(i), arrays[name].shape)) for i in extra]

    probe = loss_only or (lambda: loss_and_grads()[0])
    f0 = probe()
    worst, worst_err, refined = None, 0.0, 0
    for name, idx in picks:
        arr = arrays[name]
        orig = arr[idx]
        step = h
        while True:
            arr[idx] = orig + step
            fp = probe()
            arr[idx] = orig - step
            fm = probe()
            arr[idx] = orig
            err = relative_error(float(grads[name][idx]), (fp - fm) / (2.0 * step))
            kinked = relative_error((fp - f0) / step, (f0 - fm) / step) >= tolerance
            if err < tolerance or not kinked or step / 10.0 < min_h * (1 - 1e-9):
                break
            step /= 10.0
        refined += step < h
        if err >= worst_err:
            worst, worst_err = (name, tuple(int(i) for i in idx)), err
    return GradcheckReport(worst_err, tolerance, len(picks), worst, refined)
