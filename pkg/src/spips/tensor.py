"""Minimal dense-tensor kernel: storage, convolution, pooling, resampling.

Everything downstream (backbone inference, quality maps, the fusion head)
runs on these few operations.  Values are 32-bit floats in row-major order.
All operations are pure: inputs are never mutated, and every result passes
through the Tensor constructor, so non-finite values cannot propagate
silently.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "conv2d",
    "relu",
    "maxpool2d",
    "resize_bilinear",
    "downsample2x",
    "gaussian_window",
]


class Tensor:
    """Immutable float32 array of rank 1 to 4."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float32, order="C")
        if arr.ndim < 1 or arr.ndim > 4:
            raise ValueError(f"tensor rank must be between 1 and 4, got {arr.ndim}")
        if arr.size == 0:
            raise ValueError("tensor extents must all be positive")
        if not np.isfinite(arr).all():
            raise ValueError("tensor values must be finite")
        arr.setflags(write=False)
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        """Read-only float32 ndarray view of the contents."""
        return self._data

    @property
    def shape(self) -> tuple:
        return self._data.shape

    @property
    def rank(self) -> int:
        return self._data.ndim

    def tolist(self):
        return self._data.tolist()

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def _require_rank(t: Tensor, rank: int, what: str) -> None:
    if not isinstance(t, Tensor):
        raise ValueError(f"{what} must be a Tensor, got {type(t).__name__}")
    if t.rank != rank:
        raise ValueError(f"{what} must have rank {rank}, got shape {t.shape}")


def conv2d(x: Tensor, weights: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlate x (C,H,W) with weights (O,C,kH,kW) plus per-filter bias.

    Zero padding of `pad` pixels on every side, no kernel flip (the inference
    convention pretrained weights are stored in).  Output spatial extents are
    floor((H + 2*pad - kH)/stride) + 1 and the analogue for W; both must be
    positive.
    """
    _require_rank(x, 3, "conv2d input")
    _require_rank(weights, 4, "conv2d weights")
    _require_rank(bias, 1, "conv2d bias")
    if not isinstance(stride, int) or stride < 1:
        raise ValueError(f"stride must be a positive int, got {stride!r}")
    if not isinstance(pad, int) or pad < 0:
        raise ValueError(f"pad must be a non-negative int, got {pad!r}")

    c_in, h, w = x.shape
    c_out, c_in_w, kh, kw = weights.shape
    if c_in != c_in_w:
        raise ValueError(
            f"channel mismatch: input has {c_in} channels, weights expect {c_in_w}"
        )
    if bias.shape[0] != c_out:
        raise ValueError(
            f"bias length {bias.shape[0]} does not match {c_out} output channels"
        )

    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ValueError(
            f"non-positive output extent {out_h}x{out_w} for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, pad {pad}"
        )

    src = x.data
    if pad > 0:
        src = np.pad(src, ((0, 0), (pad, pad), (pad, pad)))
    # windows: (C, H', W', kH, kW) view, no copy
    windows = np.lib.stride_tricks.sliding_window_view(src, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    out = np.tensordot(weights.data, windows, axes=([1, 2, 3], [0, 3, 4]))
    out += bias.data[:, None, None]
    return Tensor(out)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); shape preserved."""
    if not isinstance(x, Tensor):
        raise ValueError(f"relu input must be a Tensor, got {type(x).__name__}")
    return Tensor(np.maximum(x.data, np.float32(0.0)))


def maxpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Per-channel sliding-window maximum over k*k windows, no padding."""
    _require_rank(x, 3, "maxpool2d input")
    if not isinstance(k, int) or k < 1:
        raise ValueError(f"pool window must be a positive int, got {k!r}")
    if not isinstance(stride, int) or stride < 1:
        raise ValueError(f"stride must be a positive int, got {stride!r}")
    _, h, w = x.shape
    if k > h or k > w:
        raise ValueError(f"pool window {k} larger than input {h}x{w}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    return Tensor(windows.max(axis=(3, 4)))


def _axis_lerp(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    """Resample one axis with half-pixel-centered bilinear interpolation.

    Written in lerp form a + f*(b - a) so constant inputs reproduce exactly.
    """
    in_len = arr.shape[axis]
    src = (np.arange(out_len, dtype=np.float64) + 0.5) * (in_len / out_len) - 0.5
    src = np.clip(src, 0.0, in_len - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, in_len - 1)
    frac = (src - i0).astype(np.float32)
    shape = [1] * arr.ndim
    shape[axis] = out_len
    frac = frac.reshape(shape)
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    return a + frac * (b - a)


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable bilinear resample of x (C,h,w) to (C,out_h,out_w)."""
    _require_rank(x, 3, "resize_bilinear input")
    if not isinstance(out_h, int) or not isinstance(out_w, int) or out_h < 1 or out_w < 1:
        raise ValueError(f"output extents must be positive ints, got {out_h!r}x{out_w!r}")
    out = _axis_lerp(x.data, out_h, axis=1)
    out = _axis_lerp(out, out_w, axis=2)
    return Tensor(out)


def downsample2x(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2; an odd trailing row/column is dropped."""
    _require_rank(x, 3, "downsample2x input")
    _, h, w = x.shape
    if h < 2 or w < 2:
        raise ValueError(f"downsample2x needs at least 2x2 input, got {h}x{w}")
    he, we = h // 2, w // 2
    v = x.data[:, : 2 * he, : 2 * we]
    out = (v[:, 0::2, 0::2] + v[:, 1::2, 0::2] + v[:, 0::2, 1::2] + v[:, 1::2, 1::2]) * np.float32(0.25)
    return Tensor(out)


def gaussian_window(size: int, sigma: float) -> Tensor:
    """Separable 2-D Gaussian window of odd size, entries summing to 1."""
    if not isinstance(size, int) or size < 1:
        raise ValueError(f"window size must be a positive int, got {size!r}")
    if size % 2 == 0:
        raise ValueError(f"window size must be odd, got {size}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    win /= win.sum()
    return Tensor(win)
