import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloformer.errors import ArgumentError, DimensionError, NumericError
from cloformer.tensor import (Tensor, add, concat_channels, finite_diff_grad, gradcheck, hadamard,
                              is_grad_enabled, matmul, mean, mul, no_grad, relative_error, reshape,
                              scale, split_channels, split_sizes, sum_, transpose)


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def test_default_dtype_and_dims():
    t = Tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float32
    assert t.dims == (1, 1, 2, 2)
    assert Tensor(np.zeros(3)).dtype == np.float64


@pytest.mark.parametrize("shape", [(0, 3), (2, 0), (1, 1, 1, 1, 1)])
def test_bad_shapes_rejected(shape):
    with pytest.raises(DimensionError):
        Tensor(np.zeros(shape))


def test_item_needs_one_element():
    assert Tensor([3.5]).item() == 3.5
    with pytest.raises(DimensionError):
        Tensor([1.0, 2.0]).item()


def test_backward_through_shared_subexpression():
    x = t64([1.0, 2.0, 3.0])
    y = mul(x, x)             # x^2
    z = sum_(add(y, y))       # 2 x^2
    z.backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_gradients_accumulate_across_calls():
    x = t64([1.0, -2.0])
    sum_(scale(x, 3.0)).backward()
    sum_(scale(x, 3.0)).backward()
    np.testing.assert_allclose(x.grad, [6.0, 6.0])


def test_intermediates_do_not_keep_grad():
    x = t64([1.0, 2.0])
    y = scale(x, 2.0)
    sum_(y).backward()
    assert y.grad is None
    assert x.grad is not None


def test_no_grad_is_thread_local():
    seen = {}

    def worker():
        seen["inner"] = is_grad_enabled()

    with no_grad():
        th = threading.Thread(target=worker)
        th.start()
        th.join()
        assert not is_grad_enabled()
        y = scale(t64([1.0]), 2.0)
        assert not y.requires_grad
    assert seen["inner"] is True
    assert is_grad_enabled()


def test_broadcast_add_reduces_gradient():
    a = t64(np.ones((2, 3, 4, 4)))
    b = t64(np.ones((1, 3, 1, 1)))
    sum_(add(a, b)).backward()
    assert b.grad.shape == (1, 3, 1, 1)
    np.testing.assert_allclose(b.grad, 32.0)


def test_hadamard_is_strict():
    with pytest.raises(DimensionError):
        hadamard(t64(np.ones((2, 3))), t64(np.ones((1, 3))))


def test_split_and_concat_roundtrip():
    x = t64(np.arange(2 * 5 * 2 * 2).reshape(2, 5, 2, 2))
    a, b = split_channels(x, 2)
    assert a.shape == (2, 2, 2, 2) and b.shape == (2, 3, 2, 2)
    np.testing.assert_array_equal(concat_channels(a, b).data, x.data)
    for at in (0, 5):
        with pytest.raises(ArgumentError):
            split_channels(x, at)
    parts = split_sizes(x, [1, 0, 4])
    assert parts[1] is None
    assert parts[2].shape[1] == 4


def test_matmul_batched_gradients():
    a = t64(np.random.default_rng(0).normal(size=(2, 3, 4)))
    b = t64(np.random.default_rng(1).normal(size=(2, 4, 5)))
    w = np.random.default_rng(2).normal(size=(2, 3, 5))
    errs = gradcheck(lambda: sum_(mul(matmul(a, b), Tensor(w))), [a, b])
    assert max(errs) < 1e-8


def test_reshape_transpose_mean_gradients():
    x = t64(np.random.default_rng(3).normal(size=(2, 3, 4)))
    w = np.random.default_rng(4).normal(size=(4, 2, 3))
    f = lambda: sum_(mul(transpose(reshape(x, (2, 12)), (1, 0)).reshape(4, 3, 2).transpose(0, 2, 1),
                         Tensor(w)))
    assert max(gradcheck(f, [x])) < 1e-8
    g = lambda: mean(mul(x, x), axis=(0, 2))
    y = g()
    assert y.shape == (3,)


def test_finite_diff_matches_known_derivative():
    x = Tensor(np.array([0.3, -1.2]), dtype=np.float64)
    g = finite_diff_grad(lambda t: sum_(mul(t, mul(t, t))), x)
    np.testing.assert_allclose(g.data, 3 * x.data ** 2, rtol=1e-7)


def test_finite_diff_rejects_non_finite():
    x = Tensor(np.array([1.0]), dtype=np.float64)
    with pytest.raises(NumericError):
        finite_diff_grad(lambda t: scale(t, np.inf), x)


def test_gradcheck_requires_float64():
    with pytest.raises(ArgumentError):
        gradcheck(lambda: None, [Tensor(np.array([1.0], dtype=np.float32))])


def test_relative_error_symmetric_and_zero_safe():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    a, b = np.array([1.0, 2.0]), np.array([1.0, 2.5])
    assert relative_error(a, b) == relative_error(b, a)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12))
def test_sum_of_scaled_has_constant_gradient(vals):
    x = t64(vals)
    sum_(scale(x, -2.5)).backward()
    np.testing.assert_allclose(x.grad, -2.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 5))
def test_mul_gradient_is_other_operand(n, c, w):
    rng = np.random.default_rng(n * 100 + c * 10 + w)
    a, b = t64(rng.normal(size=(n, c, w))), t64(rng.normal(size=(n, c, w)))
    sum_(mul(a, b)).backward()
    np.testing.assert_allclose(a.grad, b.data)
    np.testing.assert_allclose(b.grad, a.data)
