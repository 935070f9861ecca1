"""Frozen CNN backbones: the .spwt weight format and the tapped forward pass.

A backbone is an ordered list of conv / relu / maxpool layers plus a list of
tap indices; extract_features runs the layers in order and records the output
of every tapped layer.  Weights are immutable after load, so one spec can be
shared freely across threads.

.spwt byte layout (little-endian):

    magic "SPWT", u32 version=1, u8 norm_flag,
    if norm_flag=1: 6 x f32 (channel means, channel stds),
    u32 n_layers, u32 n_taps, n_taps x u32 tap indices,
    then per layer: u8 kind (0=Conv, 1=ReLU, 2=MaxPool);
      Conv: 6 x u32 (out_c, in_c, kH, kW, stride, pad),
            out_c*in_c*kH*kW x f32 weights, out_c x f32 biases
      MaxPool: 2 x u32 (k, stride)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import Tensor, conv2d, maxpool2d, relu

__all__ = [
    "ConvLayer",
    "ReluLayer",
    "MaxPoolLayer",
    "Normalization",
    "BackboneSpec",
    "FeaturePyramid",
    "load_backbone",
    "save_backbone",
    "extract_features",
]

MAGIC = b"SPWT"
VERSION = 1
_KIND_CONV = 0
_KIND_RELU = 1
_KIND_POOL = 2


@dataclass(frozen=True)
class ConvLayer:
    out_channels: int
    in_channels: int
    kernel_h: int
    kernel_w: int
    stride: int
    pad: int
    weights: Tensor  # (out_c, in_c, kH, kW)
    bias: Tensor  # (out_c,)

    def __post_init__(self):
        expected = (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
        if self.weights.shape != expected:
            raise ValueError(
                f"conv weights shape {self.weights.shape} does not match declared {expected}"
            )
        if self.bias.shape != (self.out_channels,):
            raise ValueError(
                f"conv bias length {self.bias.shape[0]} does not match {self.out_channels} filters"
            )


@dataclass(frozen=True)
class ReluLayer:
    pass


@dataclass(frozen=True)
class MaxPoolLayer:
    kernel: int
    stride: int


@dataclass(frozen=True)
class Normalization:
    """Per-channel input shift/scale applied before the first layer."""

    means: tuple
    stds: tuple


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    layers: tuple
    taps: tuple
    norm: Normalization | None = None

    def __post_init__(self):
        if len(self.layers) == 0:
            raise ValueError("backbone must declare at least one layer")
        if len(self.taps) == 0:
            raise ValueError("tap list must be non-empty")
        if list(self.taps) != sorted(set(self.taps)):
            raise ValueError(f"tap indices must be strictly increasing, got {self.taps}")
        if self.taps[0] < 0 or self.taps[-1] >= len(self.layers):
            raise ValueError(
                f"tap index out of range: {self.taps} for {len(self.layers)} layers"
            )
        # conv channel chaining is checkable without an input image
        current = None
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ConvLayer):
                if current is not None and layer.in_channels != current:
                    raise ValueError(
                        f"layer {i} expects {layer.in_channels} channels but receives {current}"
                    )
                current = layer.out_channels

    def input_channels(self) -> int:
        for layer in self.layers:
            if isinstance(layer, ConvLayer):
                return layer.in_channels
        return 3

    def tap_channels(self) -> tuple:
        """Channel count of every tapped layer output (independent of H, W)."""
        counts = []
        current = self.input_channels()
        tapset = set(self.taps)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ConvLayer):
                current = layer.out_channels
            if i in tapset:
                counts.append(current)
        return tuple(counts)


@dataclass(frozen=True)
class FeaturePyramid:
    """Outputs of the tapped layers, finest (earliest) first."""

    features: tuple

    def __len__(self):
        return len(self.features)


class _Reader:
    """Bounds-checked little-endian cursor over a byte string."""

    def __init__(self, blob: bytes, what: str):
        self.blob = blob
        self.off = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise FormatError(f"truncated {self.what}: needed {n} bytes at offset {self.off}")
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32)

    def done(self) -> bool:
        return self.off == len(self.blob)


def load_backbone(path) -> BackboneSpec:
    """Parse and validate a .spwt file; the backbone's name is the file stem."""
    path = Path(path)
    blob = path.read_bytes()
    r = _Reader(blob, f".spwt file {path.name}")
    if r.take(4) != MAGIC:
        raise FormatError(f"bad magic in {path.name}: not a .spwt file")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported .spwt version {version} in {path.name}")
    norm_flag = r.u8()
    if norm_flag not in (0, 1):
        raise FormatError(f"invalid norm flag {norm_flag} in {path.name}")
    norm = None
    if norm_flag == 1:
        vals = r.f32s(6)
        norm = Normalization(means=tuple(map(float, vals[:3])), stds=tuple(map(float, vals[3:])))
        if any(s <= 0 for s in norm.stds):
            raise FormatError(f"non-positive normalization std in {path.name}")
    n_layers = r.u32()
    n_taps = r.u32()
    taps = tuple(r.u32() for _ in range(n_taps))
    layers = []
    for i in range(n_layers):
        kind = r.u8()
        if kind == _KIND_CONV:
            out_c, in_c, kh, kw, stride, pad = (r.u32() for _ in range(6))
            if min(out_c, in_c, kh, kw, stride) < 1:
                raise FormatError(f"layer {i}: non-positive conv dimension in {path.name}")
            w = r.f32s(out_c * in_c * kh * kw).reshape(out_c, in_c, kh, kw)
            b = r.f32s(out_c)
            try:
                layers.append(
                    ConvLayer(out_c, in_c, kh, kw, stride, pad, Tensor(w), Tensor(b))
                )
            except ValueError as exc:  # non-finite weights
                raise FormatError(f"layer {i}: {exc}") from exc
        elif kind == _KIND_RELU:
            layers.append(ReluLayer())
        elif kind == _KIND_POOL:
            k, stride = r.u32(), r.u32()
            if k < 1 or stride < 1:
                raise FormatError(f"layer {i}: non-positive pool dimension in {path.name}")
            layers.append(MaxPoolLayer(k, stride))
        else:
            raise FormatError(f"layer {i}: unknown layer kind {kind} in {path.name}")
    if not r.done():
        raise FormatError(f"trailing bytes after layer table in {path.name}")
    try:
        return BackboneSpec(name=path.stem, layers=tuple(layers), taps=taps, norm=norm)
    except ValueError as exc:
        raise FormatError(f"invalid backbone in {path.name}: {exc}") from exc


def save_backbone(spec: BackboneSpec, path) -> None:
    """Serialize a spec back to the .spwt byte layout."""
    parts = [MAGIC, struct.pack("<I", VERSION)]
    if spec.norm is not None:
        parts.append(struct.pack("<B", 1))
        parts.append(np.asarray(spec.norm.means + spec.norm.stds, dtype="<f4").tobytes())
    else:
        parts.append(struct.pack("<B", 0))
    parts.append(struct.pack("<II", len(spec.layers), len(spec.taps)))
    parts.append(struct.pack(f"<{len(spec.taps)}I", *spec.taps))
    for layer in spec.layers:
        if isinstance(layer, ConvLayer):
            parts.append(struct.pack("<B", _KIND_CONV))
            parts.append(
                struct.pack(
                    "<6I",
                    layer.out_channels,
                    layer.in_channels,
                    layer.kernel_h,
                    layer.kernel_w,
                    layer.stride,
                    layer.pad,
                )
            )
            parts.append(layer.weights.data.astype("<f4").tobytes())
            parts.append(layer.bias.data.astype("<f4").tobytes())
        elif isinstance(layer, ReluLayer):
            parts.append(struct.pack("<B", _KIND_RELU))
        elif isinstance(layer, MaxPoolLayer):
            parts.append(struct.pack("<B", _KIND_POOL))
            parts.append(struct.pack("<II", layer.kernel, layer.stride))
        else:
            raise ValueError(f"unknown layer type {type(layer).__name__}")
    Path(path).write_bytes(b"".join(parts))


def extract_features(spec: BackboneSpec, image: Tensor) -> FeaturePyramid:
    """Run the layers in order, recording the output at every tap index."""
    if not isinstance(image, Tensor) or image.rank != 3:
        got = image.shape if isinstance(image, Tensor) else type(image).__name__
        raise ValueError(f"image must be a C,H,W Tensor, got {got}")
    data = image.data
    if float(data.min()) < 0.0 or float(data.max()) > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    if image.shape[0] != spec.input_channels():
        raise ValueError(
            f"image has {image.shape[0]} channels, backbone expects {spec.input_channels()}"
        )

    if spec.norm is not None:
        means = np.asarray(spec.norm.means, dtype=np.float32)[:, None, None]
        stds = np.asarray(spec.norm.stds, dtype=np.float32)[:, None, None]
        x = Tensor((data - means) / stds)
    else:
        x = image

    tapset = set(spec.taps)
    features = []
    for i, layer in enumerate(spec.layers):
        try:
            if isinstance(layer, ConvLayer):
                x = conv2d(x, layer.weights, layer.bias, layer.stride, layer.pad)
            elif isinstance(layer, ReluLayer):
                x = relu(x)
            else:
                x = maxpool2d(x, layer.kernel, layer.stride)
        except ValueError as exc:
            kind = type(layer).__name__
            raise ValueError(f"layer {i} ({kind}): {exc}") from exc
        if i in tapset:
            features.append(x)
    return FeaturePyramid(features=tuple(features))
