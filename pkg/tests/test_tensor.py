import numpy as np
import pytest

from spips.tensor import (
    Tensor,
    conv2d,
    downsample2x,
    gaussian_window,
    maxpool2d,
    relu,
    resize_bilinear,
)

import oracles


def test_tensor_is_float32_copy():
    src = np.ones((2, 3), dtype=np.float64)
    t = Tensor(src)
    assert t.data.dtype == np.float32
    src[0, 0] = 99.0
    assert t.data[0, 0] == 1.0


def test_tensor_rejects_bad_ranks():
    with pytest.raises(ValueError):
        Tensor(3.0)
    with pytest.raises(ValueError):
        Tensor(np.zeros((1, 1, 1, 1, 1)))


def test_tensor_rejects_empty_and_nonfinite():
    with pytest.raises(ValueError):
        Tensor(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        Tensor([1.0, np.nan])
    with pytest.raises(ValueError):
        Tensor([1.0, np.inf])


def test_tensor_is_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_conv2d_hand_example():
    # ones 3x3 input, kernel [[1,2],[3,4]], bias 0.5: every window sums the
    # kernel, 1+2+3+4+0.5 = 10.5
    x = Tensor(np.ones((1, 3, 3)))
    w = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    b = Tensor(np.array([0.5]))
    y = conv2d(x, w, b)
    assert y.shape == (1, 2, 2)
    assert np.all(y.data == np.float32(10.5))


def test_conv2d_matches_loop_oracle_with_stride_and_pad():
    rng = np.random.default_rng(11)
    for _ in range(25):
        c_in = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 4))
        h = int(rng.integers(3, 9))
        w = int(rng.integers(3, 9))
        kh = int(rng.integers(1, min(4, h + 1)))
        kw = int(rng.integers(1, min(4, w + 1)))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        if (h + 2 * pad - kh) < 0 or (w + 2 * pad - kw) < 0:
            continue
        x = rng.normal(size=(c_in, h, w)).astype(np.float32)
        weights = rng.normal(size=(c_out, c_in, kh, kw)).astype(np.float32)
        bias = rng.normal(size=c_out).astype(np.float32)
        got = conv2d(Tensor(x), Tensor(weights), Tensor(bias), stride, pad)
        want = oracles.conv2d_loops(x, weights, bias, stride, pad)
        assert got.shape == want.shape
        assert np.max(np.abs(got.data - want)) < 1e-5


def test_conv2d_validates_shapes():
    x = Tensor(np.ones((2, 4, 4)))
    w = Tensor(np.ones((1, 3, 2, 2)))  # expects 3 input channels
    b = Tensor(np.ones(1))
    with pytest.raises(ValueError):
        conv2d(x, w, b)
    with pytest.raises(ValueError):
        conv2d(x, Tensor(np.ones((1, 2, 2, 2))), Tensor(np.ones(2)))
    with pytest.raises(ValueError):
        conv2d(x, Tensor(np.ones((1, 2, 5, 5))), b)  # kernel larger than input


def test_relu_clamps_negatives():
    y = relu(Tensor([-1.0, 0.0, 2.5]))
    assert y.tolist() == [0.0, 0.0, 2.5]


def test_maxpool_matches_loop_oracle():
    rng = np.random.default_rng(5)
    for _ in range(10):
        c = int(rng.integers(1, 4))
        h = int(rng.integers(3, 10))
        w = int(rng.integers(3, 10))
        k = int(rng.integers(1, min(h, w) + 1))
        stride = int(rng.integers(1, 4))
        x = rng.normal(size=(c, h, w)).astype(np.float32)
        got = maxpool2d(Tensor(x), k, stride)
        want = oracles.maxpool2d_loops(x, k, stride)
        assert got.shape == want.shape
        assert np.array_equal(got.data, want.astype(np.float32))


def test_maxpool_window_larger_than_input_is_an_error():
    with pytest.raises(ValueError):
        maxpool2d(Tensor(np.ones((1, 2, 2))), 3, 1)


def test_downsample2x_hand_example():
    x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    y = downsample2x(x)
    assert y.shape == (1, 1, 1)
    assert y.data[0, 0, 0] == np.float32(2.5)


def test_downsample2x_drops_odd_edges():
    x = Tensor(np.arange(15, dtype=np.float32).reshape(1, 3, 5))
    y = downsample2x(x)
    assert y.shape == (1, 1, 2)
    # top-left 2x2 block of [[0..4],[5..9]] is (0+1+5+6)/4
    assert y.data[0, 0, 0] == np.float32(3.0)


def test_resize_bilinear_preserves_constants_exactly():
    for value in (0.0, 0.25, 1.0, 0.1):
        x = Tensor(np.full((2, 5, 7), value, dtype=np.float32))
        y = resize_bilinear(x, 13, 4)
        assert np.all(y.data == np.float32(value))


def test_resize_bilinear_identity_when_size_unchanged():
    rng = np.random.default_rng(2)
    x = Tensor(rng.uniform(0, 1, size=(3, 6, 6)).astype(np.float32))
    y = resize_bilinear(x, 6, 6)
    assert np.array_equal(y.data, x.data)


def test_resize_bilinear_doubles_a_ramp():
    # half-pixel centers: upsampling [0, 1] by 2 gives [0, 0.25, 0.75, 1]
    x = Tensor(np.array([[[0.0, 1.0]]]))
    y = resize_bilinear(x, 1, 4)
    assert np.allclose(y.data[0, 0], [0.0, 0.25, 0.75, 1.0], atol=1e-7)


def test_gaussian_window_normalized_and_symmetric():
    win = gaussian_window(11, 1.5)
    assert win.shape == (11, 11)
    assert abs(float(win.data.sum()) - 1.0) < 1e-6
    assert np.allclose(win.data, win.data.T)
    assert np.allclose(win.data, win.data[::-1, ::-1])
    # peak at the center
    assert win.data[5, 5] == win.data.max()


def test_gaussian_window_rejects_even_size():
    with pytest.raises(ValueError):
        gaussian_window(10, 1.5)
    with pytest.raises(ValueError):
        gaussian_window(11, 0.0)
