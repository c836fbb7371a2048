import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harnet import tensor as T
from harnet.errors import ShapeError
from harnet.tensor import Tensor


def triple_loop_matmul(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return out


def test_zeros_examples():
    z = T.zeros([2, 3])
    assert z.shape == (2, 3) and z.tolist() == [[0.0] * 3] * 2
    assert T.zeros([1]).tolist() == [0.0]
    big = T.zeros([1, 128, 9])
    assert big.shape == (1, 128, 9) and big.size == 1152 and not np.any(big.numpy())


@pytest.mark.parametrize("shape", [[], [0], [2, 0, 3], [-1]])
def test_zeros_rejects_bad_shapes(shape):
    with pytest.raises(ShapeError):
        T.zeros(shape)


def test_tensor_is_immutable_and_copies_input():
    src = np.arange(6.0)
    t = Tensor(src, [2, 3])
    src[0] = 99.0
    assert t.item(0, 0) == 0.0
    with pytest.raises(ValueError):
        t.numpy()[0, 0] = 1.0
    with pytest.raises(AttributeError):
        t.shape = (3, 2)


def test_row_major_strides():
    t = T.zeros([2, 3, 4])
    assert t.strides == (12, 4, 1)
    assert t.data.shape == (24,)


def test_matmul_examples():
    rng = np.random.default_rng(0)
    b = Tensor(rng.standard_normal((2, 5)))
    assert T.matmul(T.identity(2), b) == b
    assert not np.any(T.matmul(T.zeros([3, 2]), b).numpy())
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    got = T.matmul(Tensor(a), Tensor(b)).numpy()
    np.testing.assert_allclose(got, triple_loop_matmul(a.tolist(), b.tolist()), rtol=0, atol=1e-12)


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        T.matmul(T.zeros([2, 3]), T.zeros([2, 3]))
    with pytest.raises(ShapeError):
        T.matmul(T.zeros([2, 3, 1]), T.zeros([1, 3]))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_matmul_identity_is_exact(m, n, seed):
    a = Tensor(np.random.default_rng(seed).standard_normal((m, n)) * 1e3)
    assert T.matmul(a, T.identity(n)) == a


def test_concat_examples():
    x = Tensor(np.arange(6.0), [2, 3])
    assert T.concat([x], 0) == x
    y = Tensor(np.arange(6.0, 12.0), [2, 3])
    assert T.concat([x, y], 1).shape == (2, 6)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.integers(1, 4), min_size=1, max_size=4),
    st.integers(0, 2),
    st.integers(0, 2**32 - 1),
)
def test_concat_slice_round_trip(widths, axis, seed):
    rng = np.random.default_rng(seed)
    base = [2, 3, 2]
    parts = []
    for w in widths:
        shape = list(base)
        shape[axis] = w
        parts.append(Tensor(rng.standard_normal(shape)))
    out = T.concat(parts, axis)
    assert out.shape[axis] == sum(widths)
    for p, off in zip(parts, T.concat_offsets(parts, axis)):
        assert T.slice_axis(out, axis, off, off + p.shape[axis]) == p


def test_concat_errors():
    with pytest.raises(ShapeError):
        T.concat([T.zeros([2, 3]), T.zeros([2, 3, 1])], 0)
    with pytest.raises(ShapeError):
        T.concat([T.zeros([2, 3]), T.zeros([3, 3])], 1)
    with pytest.raises(ShapeError):
        T.concat([], 0)


def test_elementwise_and_scalar_only_broadcasting():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[0.5, 0.5], [0.5, 0.5]])
    assert (a + b).tolist() == [[1.5, 2.5], [3.5, 4.5]]
    assert (a * b).tolist() == [[0.5, 1.0], [1.5, 2.0]]
    assert (a * 2.0).tolist() == [[2.0, 4.0], [6.0, 8.0]]
    assert T.scale(a, -1.0) == -a
    with pytest.raises(ShapeError):
        T.add(a, Tensor([1.0, 2.0]))


def test_reductions():
    a = Tensor(np.arange(6.0), [2, 3])
    assert T.reduce_sum(a) == 15.0
    assert T.reduce_sum(a, axis=0).tolist() == [3.0, 5.0, 7.0]
    assert T.reduce_mean(a, axis=1).tolist() == [1.0, 4.0]
    assert T.reduce_max(a, axis=0).tolist() == [3.0, 4.0, 5.0]
    with pytest.raises(ShapeError):
        T.reduce_sum(a, axis=2)


def test_reduce_sum_matches_exact_sum_on_large_input():
    rng = np.random.default_rng(3)
    data = rng.standard_normal(10**6) * 10.0 ** rng.integers(-3, 4, 10**6)
    exact = math.fsum(data.tolist())
    got = T.reduce_sum(Tensor(data))
    assert abs(got - exact) <= 1e-9 * abs(exact)


def test_reshape_preserves_data():
    a = Tensor(np.arange(12.0), [3, 4])
    r = a.reshape(2, 6)
    assert r.shape == (2, 6) and np.array_equal(r.data, a.data)
    with pytest.raises(ShapeError):
        a.reshape(5, 2)


def test_slice_bounds():
    with pytest.raises(ShapeError):
        T.slice_axis(T.zeros([2, 3]), 1, 2, 2)
