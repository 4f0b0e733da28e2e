import math

import numpy as np
import pytest

from sdinet import tensor as T
from sdinet.tensor import DimensionError, Tensor, UsageError, backward, grad_check, no_grad, tape

# Phi(1) for the exact-erf GeLU, frozen from scipy.stats.norm.cdf(1.0)
GELU_AT_ONE = 0.8413447460685429


def _t(data, rq=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=rq)


# ---------------------------------------------------------------------------
# elementwise


def test_add_mul_values(rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    assert np.array_equal(T.add(_t(a), _t(b)).data, a + b)
    assert np.array_equal(T.mul(_t(a), _t(b)).data, a * b)
    assert np.array_equal(T.sub(_t(a), _t(b)).data, a - b)
    assert np.array_equal(T.scale(_t(a), 2.5).data, a * 2.5)


def test_broadcast_gradients():
    a = _t(np.ones((3, 4)))
    b = _t(np.ones((1, 4)))
    backward(T.sum_all(T.mul(a, b)))
    assert np.array_equal(a.grad, np.ones((3, 4)))
    assert np.array_equal(b.grad, np.full((1, 4), 3.0))  # summed over the broadcast axis


def test_broadcast_shape_error():
    with pytest.raises(DimensionError):
        T.add(_t(np.ones((3, 4))), _t(np.ones((2, 4))))


def test_fanout_accumulates():
    x = _t([2.0])
    y = T.add(x, x)
    backward(T.sum_all(y))
    assert np.array_equal(x.grad, [2.0])


def test_gelu_oracle_value():
    out = T.gelu(_t([1.0]))
    assert abs(out.data[0] - GELU_AT_ONE) < 1e-12
    assert abs(T.gelu(_t([0.0])).data[0]) == 0.0


def test_relu_sigmoid_clamp_values():
    x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    assert np.array_equal(T.relu(_t(x)).data, np.maximum(x, 0.0))
    assert np.allclose(T.sigmoid(_t(x)).data, 1.0 / (1.0 + np.exp(-x)))
    assert np.array_equal(T.clamp01(_t(x)).data, np.clip(x, 0.0, 1.0))


def test_clamp01_gradient_zero_outside():
    x = _t([-1.0, 0.5, 2.0])
    backward(T.sum_all(T.clamp01(x)))
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0])


# ---------------------------------------------------------------------------
# softmax / matmul


def test_softmax_rows_sum_to_one(rng):
    y = T.softmax_lastdim(_t(rng.standard_normal((6, 9)) * 5)).data
    assert np.all(np.abs(y.sum(axis=-1) - 1.0) < 1e-6)
    assert np.all(y > 0)


def test_softmax_shift_invariance(rng):
    x = rng.standard_normal((4, 5))
    a = T.softmax_lastdim(_t(x)).data
    b = T.softmax_lastdim(_t(x + 100.0)).data
    assert np.allclose(a, b, atol=1e-12)


def test_softmax_nan_rejected():
    with pytest.raises(ValueError):
        T.softmax_lastdim(_t([[0.0, math.nan]]))


def test_attention_output_in_convex_hull(rng):
    # softmax(QK^T) V stays within [min, max] of V per column
    logits = _t(rng.standard_normal((2, 8, 8)) * 3)
    v = rng.standard_normal((2, 8, 5))
    out = T.matmul(T.softmax_lastdim(logits), _t(v)).data
    lo = v.min(axis=1, keepdims=True) - 1e-6
    hi = v.max(axis=1, keepdims=True) + 1e-6
    assert np.all(out >= lo) and np.all(out <= hi)


def test_matmul_values_and_errors(rng):
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((2, 4, 5))
    assert np.allclose(T.matmul(_t(a), _t(b)).data, a @ b)
    with pytest.raises(DimensionError):
        T.matmul(_t(a), _t(rng.standard_normal((3, 4, 5))))
    with pytest.raises(DimensionError):
        T.matmul(_t(a), _t(rng.standard_normal((2, 3, 5))))
    with pytest.raises(DimensionError):
        T.matmul(_t(np.ones(4)), _t(np.ones((4, 2))))


# ---------------------------------------------------------------------------
# conv2d


def test_conv2d_flipped_kernel_delta_identity(rng):
    # cross-correlating a delta with the flipped kernel reproduces the kernel
    w = rng.standard_normal((2, 1, 3, 3))
    wf = w[:, :, ::-1, ::-1].copy()
    x = np.zeros((1, 1, 7, 7))
    x[0, 0, 3, 3] = 1.0
    out = T.conv2d(_t(x), _t(wf)).data
    assert np.allclose(out[0, :, 2:5, 2:5], w[:, 0], atol=1e-12)


def test_conv2d_shapes_and_errors(rng):
    x = _t(rng.standard_normal((2, 3, 8, 8)))
    w = _t(rng.standard_normal((5, 3, 3, 3)))
    assert T.conv2d(x, w).shape == (2, 5, 8, 8)
    assert T.conv2d(x, w, stride=2).shape == (2, 5, 4, 4)
    with pytest.raises(DimensionError):
        T.conv2d(x, _t(rng.standard_normal((5, 4, 3, 3))))  # channel mismatch
    with pytest.raises(DimensionError):
        T.conv2d(x, _t(rng.standard_normal((5, 3, 2, 2))))  # even kernel
    with pytest.raises(DimensionError):
        T.conv2d(x, w, stride=3)


def test_conv2d_matches_manual_correlation(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((1, 2, 3, 3))
    out = T.conv2d(_t(x), _t(w)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((5, 5))
    for y in range(5):
        for xx in range(5):
            ref[y, xx] = (xp[0, :, y : y + 3, xx : xx + 3] * w[0]).sum()
    assert np.allclose(out[0, 0], ref, atol=1e-12)


# ---------------------------------------------------------------------------
# shape ops / reductions


def test_sum_mean_global_pool(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    assert np.isclose(T.sum_all(_t(x)).item(), x.sum())
    assert np.isclose(T.mean_all(_t(x)).item(), x.mean())
    gp = T.global_avg_pool(_t(x)).data
    assert gp.shape == (2, 3, 1, 1)
    assert np.allclose(gp, x.mean(axis=(2, 3), keepdims=True))


def test_concat_channels_and_grad(rng):
    a = _t(rng.standard_normal((1, 2, 3, 3)))
    b = _t(rng.standard_normal((1, 4, 3, 3)))
    y = T.concat_channels([a, b])
    assert y.shape == (1, 6, 3, 3)
    backward(T.sum_all(T.mul(y, _t(np.ones(y.shape) * 2, rq=False))))
    assert np.array_equal(a.grad, np.full(a.shape, 2.0))
    assert np.array_equal(b.grad, np.full(b.shape, 2.0))
    with pytest.raises(DimensionError):
        T.concat_channels([])


def test_reshape_transpose_roundtrip(rng):
    x = rng.standard_normal((2, 3, 4))
    y = T.transpose(T.reshape(_t(x), (2, 12)), (1, 0))
    assert np.array_equal(y.data, x.reshape(2, 12).T)
    rep = grad_check(lambda a: T.transpose(T.reshape(a, (2, 12)), (1, 0)), _t(x), name="reshape")
    assert rep.ok(1e-6)


def test_upsample_preserves_constants():
    x = _t(np.full((1, 2, 5, 7), 0.37))
    y = T.upsample_bilinear_x2(x)
    assert y.shape == (1, 2, 10, 14)
    assert np.allclose(y.data, 0.37, atol=1e-15)


def test_upsample_gradient(rng):
    rep = grad_check(T.upsample_bilinear_x2, _t(rng.standard_normal((1, 2, 3, 4))), name="up")
    assert rep.ok(1e-6)


# ---------------------------------------------------------------------------
# fft


def test_fft2_linearity(rng):
    x = _t(rng.standard_normal((1, 2, 8, 8)))
    y = _t(rng.standard_normal((1, 2, 8, 8)))
    with no_grad():
        rx, ix = T.fft2_per_channel(x)
        ry, iy = T.fft2_per_channel(y)
        combo = T.add(T.scale(x, 2.0), T.scale(y, -3.0))
        rc, ic = T.fft2_per_channel(combo)
    assert np.allclose(rc.data, 2 * rx.data - 3 * ry.data, atol=1e-9)
    assert np.allclose(ic.data, 2 * ix.data - 3 * iy.data, atol=1e-9)


def test_fft2_requires_nchw():
    with pytest.raises(DimensionError):
        T.fft2_per_channel(_t(np.ones((4, 4))))


# ---------------------------------------------------------------------------
# tape mechanics


def test_backward_requires_scalar(rng):
    x = _t(rng.standard_normal((2, 2)))
    y = T.mul(x, x)
    with pytest.raises(UsageError):
        backward(y)
    tape().clear()


def test_backward_requires_tape():
    with pytest.raises(UsageError):
        backward(Tensor(np.zeros(1)))


def test_no_grad_suspends_recording(rng):
    x = _t(rng.standard_normal((2, 2)))
    with no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad
    assert not tape().nodes


def test_tape_cleared_after_backward(rng):
    x = _t(rng.standard_normal((3,)))
    backward(T.sum_all(T.mul(x, x)))
    assert not tape().nodes
    assert np.allclose(x.grad, 2 * x.data)


def test_operator_sugar(rng):
    a = _t([1.0, 2.0])
    b = _t([3.0, 4.0])
    assert np.array_equal((a + b).data, [4.0, 6.0])
    assert np.array_equal((a - b).data, [-2.0, -2.0])
    assert np.array_equal((a * 2.0).data, [2.0, 4.0])
    assert np.array_equal((-a).data, [-1.0, -2.0])


def test_grad_check_composite(rng):
    f = lambda a: T.sigmoid(T.gelu(T.mul(a, a)))
    rep = grad_check(f, _t(rng.standard_normal((3, 3))), name="composite")
    assert rep.ok(1e-5)
