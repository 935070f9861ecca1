#!/usr/bin/env python3
"""Dump a torchvision CNN backbone to the .spwt weight format.

The output file carries everything a consumer needs to rebuild the feature
extractor: input normalization, the layer stack (conv / relu / maxpool), and
which layer outputs to tap.  Weights are float32 little-endian throughout.

Byte layout, all integers little-endian:

    "SPWT"                magic
    u32                   version (= 1)
    u8                    has_norm
    6 * f32               channel means then stds   (only when has_norm = 1)
    u32                   n_layers
    u32                   n_taps
    n_taps * u32          0-based layer indices, strictly increasing
    per layer:
        u8 kind           0 conv, 1 relu, 2 maxpool
        conv:             6 * u32 (out_c, in_c, kh, kw, stride, pad),
                          then out_c*in_c*kh*kw f32 weights in C order,
                          then out_c f32 biases
        maxpool:          2 * u32 (kernel, stride)

`--verify N` re-reads the file just written and pushes N random probe
images through a small numpy forward pass over the decoded layers,
comparing every tapped activation against the source torch model.  That
exercises the same bytes a consumer will parse, so a passing verify means
the file, not just the in-memory weights, reproduces the model.
"""

import argparse
import struct
import sys
from pathlib import Path

import numpy as np
import torch
import torchvision
from torch import nn

VERSION = 1
MAGIC = b"SPWT"
KIND_CONV, KIND_RELU, KIND_POOL = 0, 1, 2
PROBE_SEED = 7

# standard ImageNet channel statistics
IMAGENET_NORM = ((0.485, 0.456, 0.406), (0.229, 0.224, 0.225))


def _square(value, what):
    if isinstance(value, tuple):
        if value[0] != value[1]:
            raise ValueError(f"{what} must be square, got {value}")
        return int(value[0])
    return int(value)


def build_alexnet(checkpoint, seed):
    """AlexNet feature stack through its last ReLU, tapping every ReLU."""
    torch.manual_seed(seed)
    model = torchvision.models.alexnet(weights=None)
    if checkpoint is not None:
        state = torch.load(checkpoint, map_location="cpu", weights_only=True)
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        model.load_state_dict(state)
    model.eval()
    features = model.features
    relu_at = tuple(i for i, m in enumerate(features) if isinstance(m, nn.ReLU))
    # the trailing maxpool feeds the classifier, not any tap; drop it
    return features[: relu_at[-1] + 1], relu_at, IMAGENET_NORM


MODELS = {"alexnet": build_alexnet}


def snapshot_layers(features):
    """Read the torch modules into plain records the writer understands."""
    records = []
    for i, mod in enumerate(features):
        if isinstance(mod, nn.Conv2d):
            if mod.groups != 1:
                raise ValueError(f"layer {i}: grouped conv is not representable")
            if _square(mod.dilation, "dilation") != 1:
                raise ValueError(f"layer {i}: dilation is not representable")
            weights = mod.weight.detach().numpy().astype("<f4")
            if mod.bias is not None:
                bias = mod.bias.detach().numpy().astype("<f4")
            else:
                bias = np.zeros(weights.shape[0], dtype="<f4")
            records.append({
                "kind": "conv",
                "stride": _square(mod.stride, f"layer {i} stride"),
                "pad": _square(mod.padding, f"layer {i} padding"),
                "weights": weights,
                "bias": bias,
            })
        elif isinstance(mod, nn.ReLU):
            records.append({"kind": "relu"})
        elif isinstance(mod, nn.MaxPool2d):
            if _square(mod.padding, "pool padding") != 0:
                raise ValueError(f"layer {i}: padded maxpool is not representable")
            if _square(mod.dilation, "pool dilation") != 1 or mod.ceil_mode:
                raise ValueError(f"layer {i}: pool variant is not representable")
            records.append({
                "kind": "pool",
                "kernel": _square(mod.kernel_size, f"layer {i} pool kernel"),
                "stride": _square(mod.stride, f"layer {i} pool stride"),
            })
        else:
            raise ValueError(f"layer {i}: unsupported module {type(mod).__name__}")
    return records


def write_spwt(path, records, taps, norm):
    parts = [MAGIC, struct.pack("<I", VERSION)]
    if norm is not None:
        means, stds = norm
        parts.append(struct.pack("<B", 1))
        parts.append(np.asarray(tuple(means) + tuple(stds), dtype="<f4").tobytes())
    else:
        parts.append(struct.pack("<B", 0))
    parts.append(struct.pack("<II", len(records), len(taps)))
    parts.append(struct.pack(f"<{len(taps)}I", *taps))
    for rec in records:
        if rec["kind"] == "conv":
            w = rec["weights"]
            parts.append(struct.pack("<B", KIND_CONV))
            parts.append(struct.pack("<6I", w.shape[0], w.shape[1], w.shape[2],
                                     w.shape[3], rec["stride"], rec["pad"]))
            parts.append(w.tobytes())
            parts.append(rec["bias"].tobytes())
        elif rec["kind"] == "relu":
            parts.append(struct.pack("<B", KIND_RELU))
        else:
            parts.append(struct.pack("<B", KIND_POOL))
            parts.append(struct.pack("<II", rec["kernel"], rec["stride"]))
    Path(path).write_bytes(b"".join(parts))


def read_spwt(path):
    """Decode a .spwt file back into (records, taps, norm)."""
    blob = Path(path).read_bytes()
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        values = struct.unpack_from(fmt, blob, off)
        off += size
        return values

    if blob[:4] != MAGIC:
        raise ValueError("not a .spwt file")
    off = 4
    (version,) = take("<I")
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    (has_norm,) = take("<B")
    norm = None
    if has_norm:
        stats = take("<6f")
        norm = (stats[:3], stats[3:])
    n_layers, n_taps = take("<II")
    taps = take(f"<{n_taps}I")
    records = []
    for _ in range(n_layers):
        (kind,) = take("<B")
        if kind == KIND_CONV:
            out_c, in_c, kh, kw, stride, pad = take("<6I")
            count = out_c * in_c * kh * kw
            weights = np.frombuffer(blob, "<f4", count, off).reshape(out_c, in_c, kh, kw)
            off += 4 * count
            bias = np.frombuffer(blob, "<f4", out_c, off)
            off += 4 * out_c
            records.append({"kind": "conv", "stride": stride, "pad": pad,
                            "weights": weights, "bias": bias})
        elif kind == KIND_RELU:
            records.append({"kind": "relu"})
        elif kind == KIND_POOL:
            kernel, stride = take("<II")
            records.append({"kind": "pool", "kernel": kernel, "stride": stride})
        else:
            raise ValueError(f"unknown layer kind {kind}")
    if off != len(blob):
        raise ValueError("trailing bytes after the last layer")
    return records, taps, norm


def _np_conv(x, weights, bias, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(x, weights.shape[1:])
    windows = windows[0, ::stride, ::stride]
    out = np.tensordot(windows, weights, axes=([2, 3, 4], [1, 2, 3]))
    return np.moveaxis(out + bias, 2, 0)


def _np_pool(x, kernel, stride):
    windows = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel), axis=(1, 2))
    return windows[:, ::stride, ::stride].max(axis=(3, 4))


def np_forward(records, taps, norm, image):
    """Forward an image through decoded records, returning tapped outputs."""
    x = image.astype(np.float32)
    if norm is not None:
        means = np.asarray(norm[0], dtype=np.float32)[:, None, None]
        stds = np.asarray(norm[1], dtype=np.float32)[:, None, None]
        x = (x - means) / stds
    tapset = set(taps)
    outs = []
    for i, rec in enumerate(records):
        if rec["kind"] == "conv":
            x = _np_conv(x, rec["weights"], rec["bias"], rec["stride"], rec["pad"])
        elif rec["kind"] == "relu":
            x = np.maximum(x, 0.0)
        else:
            x = _np_pool(x, rec["kernel"], rec["stride"])
        if i in tapset:
            outs.append(x)
    return outs


def torch_taps(features, taps, norm, image):
    """Tapped activations of the source model for one [0,1] CHW image."""
    x = torch.from_numpy(np.ascontiguousarray(image)).unsqueeze(0)
    if norm is not None:
        means = torch.tensor(norm[0], dtype=torch.float32).view(1, 3, 1, 1)
        stds = torch.tensor(norm[1], dtype=torch.float32).view(1, 3, 1, 1)
        x = (x - means) / stds
    outs = []
    tapset = set(taps)
    with torch.no_grad():
        for i, mod in enumerate(features):
            x = mod(x)
            if i in tapset:
                outs.append(x.squeeze(0).numpy().copy())
    return outs


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="dump a torchvision backbone to a .spwt weight file")
    parser.add_argument("--model", required=True, choices=sorted(MODELS))
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--checkpoint", type=Path, default=None,
                        help="local state-dict file; random init when omitted")
    parser.add_argument("--seed", type=int, default=0,
                        help="init seed used when no checkpoint is given")
    parser.add_argument("--verify", type=int, default=0, metavar="N",
                        help="re-read the file and check N random probes")
    parser.add_argument("--tol", type=float, default=1e-4,
                        help="max abs deviation allowed by --verify")
    parser.add_argument("--probes", type=Path, default=None,
                        help="record probe inputs and tapped outputs to this .npz")
    parser.add_argument("--probe-size", type=int, default=64)
    args = parser.parse_args(argv)

    try:
        features, taps, norm = MODELS[args.model](args.checkpoint, args.seed)
        records = snapshot_layers(features)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        write_spwt(args.out, records, taps, norm)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    size = args.out.stat().st_size
    print(f"wrote {args.out} ({size} bytes): {len(records)} layers, taps {taps}")

    n_probes = args.verify if args.verify > 0 else (4 if args.probes else 0)
    if n_probes == 0:
        return 0

    rng = np.random.default_rng(PROBE_SEED)
    shape = (3, args.probe_size, args.probe_size)
    probes = [rng.random(shape, dtype=np.float32) for _ in range(n_probes)]
    expected = [torch_taps(features, taps, norm, p) for p in probes]

    if args.verify > 0:
        decoded = read_spwt(args.out)
        worst = 0.0
        for probe, want in zip(probes, expected):
            got = np_forward(*decoded, probe)
            for g, w in zip(got, want):
                worst = max(worst, float(np.max(np.abs(g - w))))
        print(f"verify: max abs deviation {worst:.3e} over "
              f"{args.verify} probe(s), tol {args.tol:g}")
        if worst > args.tol:
            print("error: verification failed", file=sys.stderr)
            return 1

    if args.probes is not None:
        arrays = {"inputs": np.stack(probes)}
        for i, want in enumerate(expected):
            for t, arr in enumerate(want, start=1):
                arrays[f"probe{i}_tap{t}"] = arr
        args.probes.parent.mkdir(parents=True, exist_ok=True)
        np.savez(args.probes, **arrays)
        print(f"recorded {n_probes} probe(s) to {args.probes}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
