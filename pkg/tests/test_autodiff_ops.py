"""Forward semantics and error contracts of the core op set."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxseg import autodiff as ad


@pytest.fixture(autouse=True)
def _f64():
    with ad.precision("f64"):
        yield


def test_matmul_identity(rng):
    a = ad.tensor(rng.standard_normal((5, 4)))
    out = ad.matmul(a, ad.tensor(np.eye(4)))
    np.testing.assert_array_equal(out.numpy(), a.numpy())


def test_matmul_shape_mismatch():
    with pytest.raises(ad.ShapeMismatchError):
        ad.matmul(ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros((4, 2))))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.data())
def test_softmax_slices_sum_to_one(ndim, data):
    shape = tuple(data.draw(st.integers(2, 5)) for _ in range(ndim))
    axis = data.draw(st.integers(0, ndim - 1))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    out = ad.softmax(ad.tensor(rng.standard_normal(shape) * 5), axis=axis).numpy()
    assert out.min() >= 0
    np.testing.assert_allclose(out.sum(axis=axis), 1.0, atol=1e-6)


def test_softmax_invalid_axis():
    with pytest.raises(ad.InvalidAxisError):
        ad.softmax(ad.tensor(np.zeros((2, 2))), axis=5)


def test_conv3d_constant_field_sum_one_kernel(rng):
    """Sum-1 kernel on a constant field keeps the interior constant, and
    the optimized path agrees with the direct-loop oracle."""
    x = np.full((5, 5, 5, 1), 3.25)
    w = rng.random((3, 3, 3, 1, 1))
    w /= w.sum()
    fast = ad.conv3d(ad.tensor(x), ad.tensor(w), stride=1, padding=1).numpy()
    ref = ad.conv3d_reference(x, w, stride=1, padding=1)
    np.testing.assert_allclose(fast, ref, rtol=1e-12)
    np.testing.assert_allclose(fast[1:-1, 1:-1, 1:-1], 3.25, rtol=1e-12)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), ((1, 2, 1), (0, 1, 0))])
def test_conv3d_matches_direct_reference(rng, stride, padding):
    x = rng.standard_normal((6, 5, 7, 3))
    w = rng.standard_normal((3, 2, 3, 3, 4))
    fast = ad.conv3d(ad.tensor(x), ad.tensor(w), stride=stride, padding=padding).numpy()
    ref = ad.conv3d_reference(x, w, stride=stride, padding=padding)
    scale = np.abs(ref).max()
    assert np.abs(fast - ref).max() / scale < 1e-5


def test_conv3d_channel_mismatch(rng):
    with pytest.raises(ad.ShapeMismatchError):
        ad.conv3d(ad.tensor(np.zeros((4, 4, 4, 2))), ad.tensor(np.zeros((3, 3, 3, 3, 1))))


def test_trilinear_upsample_constant_and_factor1(rng):
    x = np.full((3, 4, 2, 2), 1.5)
    up = ad.trilinear_upsample(ad.tensor(x), 2).numpy()
    assert up.shape == (6, 8, 4, 2)
    np.testing.assert_allclose(up, 1.5, rtol=1e-12)
    same = ad.trilinear_upsample(ad.tensor(x), 1).numpy()
    np.testing.assert_array_equal(same, x)


def test_trilinear_upsample_linear_ramp_interior():
    # linear functions are reproduced exactly away from the clamped edges
    n = 4
    x = np.arange(n, dtype=float).reshape(n, 1, 1, 1) * np.ones((n, 2, 2, 1))
    up = ad.trilinear_upsample(ad.tensor(x), 2).numpy()
    expected = (np.arange(2 * n) + 0.5) / 2 - 0.5
    np.testing.assert_allclose(up[1:-1, 0, 0, 0], expected[1:-1], rtol=1e-12)


def test_norm_group_statistics(rng):
    x = rng.standard_normal((6, 7)) * 3 + 1
    out = ad.layer_norm(ad.tensor(x), axis=-1).numpy()
    assert np.abs(out.mean(axis=-1)).max() < 1e-5
    assert np.abs(out.var(axis=-1) - 1).max() < 1e-4

    y = rng.standard_normal((4, 5, 3, 6)) * 2 - 5
    out = ad.instance_norm(ad.tensor(y)).numpy()
    mean = out.mean(axis=(0, 1, 2))
    var = out.var(axis=(0, 1, 2))
    assert np.abs(mean).max() < 1e-5
    assert np.abs(var - 1).max() < 1e-4


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 5), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_concat_then_split_identity(rows, a, b, seed):
    rng = np.random.default_rng(seed)
    x = ad.tensor(rng.standard_normal((rows, a)))
    y = ad.tensor(rng.standard_normal((rows, b)))
    joined = ad.concat([x, y], axis=1)
    xs, ys = ad.split(joined, [a, b], axis=1)
    np.testing.assert_array_equal(xs.numpy(), x.numpy())
    np.testing.assert_array_equal(ys.numpy(), y.numpy())


def test_concat_shape_mismatch():
    with pytest.raises(ad.ShapeMismatchError):
        ad.concat([ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros((3, 3)))], axis=1)


def test_non_finite_input_rejected():
    with pytest.raises(ad.NonFiniteError):
        ad.tensor([np.inf, 1.0])
    x = ad.tensor([1.0, 2.0])
    x.data[0] = np.nan  # corrupt after construction
    with pytest.raises(ad.NonFiniteError):
        ad.relu(x)


def test_log_rejects_nonpositive():
    with pytest.raises(ad.NonFiniteError):
        ad.log(ad.tensor([0.5, 0.0]))


def test_dtype_mixing_rejected():
    a = ad.tensor([1.0], dtype=np.float32)
    b = ad.tensor([1.0], dtype=np.float64)
    with pytest.raises(ad.DtypeMismatchError):
        ad.add(a, b)


def test_precision_modes():
    with ad.precision("f32"):
        assert ad.tensor([1.0]).dtype == np.float32
    with ad.precision("f64"):
        assert ad.tensor([1.0]).dtype == np.float64


def test_relu_gelu_sigmoid_values(rng):
    x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    np.testing.assert_array_equal(ad.relu(ad.tensor(x)).numpy(), np.maximum(x, 0))
    sig = ad.sigmoid(ad.tensor(x)).numpy()
    np.testing.assert_allclose(sig, 1 / (1 + np.exp(-x)), rtol=1e-12)
    g = ad.gelu(ad.tensor(x)).numpy()
    ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x**3)))
    np.testing.assert_allclose(g, ref, rtol=1e-12)


def test_reduce_and_shape_ops(rng):
    x = rng.standard_normal((3, 4, 5))
    t = ad.tensor(x)
    np.testing.assert_allclose(ad.reduce_sum(t).item(), x.sum(), rtol=1e-12)
    np.testing.assert_allclose(
        ad.reduce_mean(t, axis=(0, 2)).numpy(), x.mean(axis=(0, 2)), rtol=1e-12
    )
    np.testing.assert_array_equal(
        ad.permute(t, (2, 0, 1)).numpy(), x.transpose(2, 0, 1)
    )
    np.testing.assert_array_equal(ad.reshape(t, (12, 5)).numpy(), x.reshape(12, 5))
    with pytest.raises(ad.ShapeMismatchError):
        ad.reshape(t, (7, 7))
    with pytest.raises(ad.InvalidAxisError):
        ad.permute(t, (0, 1))


def test_clamp_values_and_gradient_convention():
    x = ad.tensor([-5.0, 0.0, 5.0], requires_grad=True)
    y = ad.clamp(x, -1.0, 1.0)
    np.testing.assert_array_equal(y.numpy(), [-1.0, 0.0, 1.0])
    ad.backward(ad.reduce_sum(y))
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])
