"""Dense float64 tensor value type.

A ``Tensor`` is an immutable row-major array with explicit shape. Storage is a
read-only numpy buffer, so tensors can be shared between threads freely and
converted to ndarrays without copying (``np.asarray(t)``).

Only scalar-tensor broadcasting is supported; elementwise ops between two
tensors require identical shapes.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0:
        raise ShapeError("shape must have at least one dimension")
    if any(d < 1 for d in shape):
        raise ShapeError(f"every dimension must be >= 1, got {shape}")
    return shape


class Tensor:
    __slots__ = ("_array",)

    def __init__(self, data, shape: Sequence[int] | None = None):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if shape is not None:
            shape = _check_shape(shape)
            if math.prod(shape) != arr.size:
                raise ShapeError(f"cannot view {arr.size} values as shape {shape}")
            arr = arr.reshape(shape)
        else:
            _check_shape(arr.shape)
        arr.flags.writeable = False
        self._array = arr

    @classmethod
    def wrap(cls, arr: np.ndarray) -> "Tensor":
        """Take ownership of a float64 C-contiguous array without copying.

        The caller must not write to ``arr`` afterwards.
        """
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        _check_shape(arr.shape)
        t = cls.__new__(cls)
        arr = arr.view()
        arr.flags.writeable = False
        t._array = arr
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def ndim(self) -> int:
        return self._array.ndim

    @property
    def size(self) -> int:
        return self._array.size

    @property
    def strides(self) -> tuple[int, ...]:
        """Row-major strides in elements (not bytes)."""
        out = []
        step = 1
        for d in reversed(self.shape):
            out.append(step)
            step *= d
        return tuple(reversed(out))

    @property
    def data(self) -> np.ndarray:
        """Flat read-only view of the values in row-major order."""
        return self._array.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self._array

    def __array__(self, dtype=None, copy=None):
        if dtype is not None and np.dtype(dtype) != np.float64:
            return self._array.astype(dtype)
        if copy:
            return self._array.copy()
        return self._array

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._array, other._array))

    __hash__ = None

    def tolist(self):
        return self._array.tolist()

    def item(self, *index: int) -> float:
        return float(self._array[index])

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(other, -1.0) if isinstance(other, Tensor) else -other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and not isinstance(shape[0], int):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_array(x) -> np.ndarray:
    """float64 ndarray view of a Tensor or array-like."""
    return np.asarray(x, dtype=np.float64)


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor.wrap(np.zeros(_check_shape(shape)))


def identity(n: int) -> Tensor:
    return Tensor.wrap(np.eye(n))


def from_numpy(arr) -> Tensor:
    return Tensor(arr)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_array(a), as_array(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return Tensor.wrap(a @ b)


def _binary(a, b, op, name):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"{name}: shapes differ {a.shape} vs {b.shape} (no broadcasting)")
        return Tensor.wrap(op(a.numpy(), b.numpy()))
    if isinstance(a, Tensor) and np.isscalar(b):
        return Tensor.wrap(op(a.numpy(), float(b)))
    if isinstance(b, Tensor) and np.isscalar(a):
        return Tensor.wrap(op(float(a), b.numpy()))
    return NotImplemented


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, "add")


def mul(a, b) -> Tensor:
    return _binary(a, b, np.multiply, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    return Tensor.wrap(a.numpy() * float(factor))


def _axis(t: Tensor, axis: int) -> int:
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {t.ndim}")
    return axis % t.ndim


def _reduce(t: Tensor, axis, fn):
    if axis is None:
        return float(fn(t.numpy()))
    axis = _axis(t, axis)
    out = fn(t.numpy(), axis=axis)
    if out.ndim == 0:
        out = out.reshape(1)
    return Tensor.wrap(out)


def reduce_sum(t: Tensor, axis: int | None = None):
    """Sum over one axis (Tensor result) or over everything (float result)."""
    if axis is None:
        # fsum keeps the total exact to one rounding for large inputs
        return math.fsum(t.data.tolist())
    return _reduce(t, axis, np.sum)


def reduce_mean(t: Tensor, axis: int | None = None):
    if axis is None:
        return reduce_sum(t) / t.size
    return _reduce(t, axis, np.mean)


def reduce_max(t: Tensor, axis: int | None = None):
    return _reduce(t, axis, np.max)


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    shape = _check_shape(shape)
    if math.prod(shape) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} values) to {shape}")
    return Tensor.wrap(t.numpy().reshape(shape))


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = _axis(t, axis)
    n = t.shape[axis]
    if not 0 <= start < stop <= n:
        raise ShapeError(f"slice [{start}:{stop}] invalid for dimension of size {n}")
    index = [slice(None)] * t.ndim
    index[axis] = slice(start, stop)
    return Tensor.wrap(np.ascontiguousarray(t.numpy()[tuple(index)]))


def concat(parts: Iterable[Tensor], axis: int) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of an empty list")
    first = parts[0]
    axis = _axis(first, axis)
    for p in parts[1:]:
        if p.ndim != first.ndim:
            raise ShapeError(f"concat rank mismatch: {first.shape} vs {p.shape}")
        for d in range(first.ndim):
            if d != axis and p.shape[d] != first.shape[d]:
                raise ShapeError(f"concat dimension {d} mismatch: {first.shape} vs {p.shape}")
    return Tensor.wrap(np.concatenate([p.numpy() for p in parts], axis=axis))


def concat_offsets(parts: Sequence[Tensor], axis: int) -> list[int]:
    """Start offset of each part along ``axis`` in ``concat(parts, axis)``."""
    offsets, pos = [], 0
    for p in parts:
        offsets.append(pos)
        pos += p.shape[axis]
    return offsets
