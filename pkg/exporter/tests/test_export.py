import struct
import subprocess
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
import torch
import torchvision
from torch import nn

import export_weights as ew

SCRIPT = Path(__file__).resolve().parents[1] / "export_weights.py"


def _run(*args):
    return subprocess.run([sys.executable, str(SCRIPT), *args],
                          capture_output=True, text=True)


@pytest.fixture(scope="session")
def exported(tmp_path_factory):
    out = tmp_path_factory.mktemp("export")
    r = _run("--model", "alexnet", "--out", str(out / "alexnet.spwt"),
             "--verify", "2", "--probes", str(out / "probes.npz"))
    assert r.returncode == 0, r.stderr
    return SimpleNamespace(spwt=out / "alexnet.spwt", probes=out / "probes.npz",
                           stdout=r.stdout)


def test_header_and_layer_table(exported):
    # parsed by hand here so the test does not trust the script's own reader
    blob = exported.spwt.read_bytes()
    assert blob[:4] == b"SPWT"
    (version,) = struct.unpack_from("<I", blob, 4)
    assert version == 1
    assert blob[8] == 1  # normalization present
    stats = struct.unpack_from("<6f", blob, 9)
    assert stats[:3] == pytest.approx((0.485, 0.456, 0.406), abs=1e-7)
    assert stats[3:] == pytest.approx((0.229, 0.224, 0.225), abs=1e-7)
    n_layers, n_taps = struct.unpack_from("<II", blob, 33)
    assert n_layers == 12
    taps = struct.unpack_from(f"<{n_taps}I", blob, 41)
    assert taps == (1, 4, 7, 9, 11)

    off = 41 + 4 * n_taps
    seen = []
    for _ in range(n_layers):
        kind = blob[off]
        off += 1
        if kind == 0:
            dims = struct.unpack_from("<6I", blob, off)
            off += 24 + 4 * (dims[0] * dims[1] * dims[2] * dims[3] + dims[0])
            seen.append(("conv",) + dims)
        elif kind == 1:
            seen.append(("relu",))
        else:
            seen.append(("pool",) + struct.unpack_from("<II", blob, off))
            off += 8
    assert off == len(blob)
    assert [s[0] for s in seen] == ["conv", "relu", "pool", "conv", "relu", "pool",
                                    "conv", "relu", "conv", "relu", "conv", "relu"]
    convs = [s[1:] for s in seen if s[0] == "conv"]
    assert convs == [
        (64, 3, 11, 11, 4, 2),
        (192, 64, 5, 5, 1, 2),
        (384, 192, 3, 3, 1, 1),
        (256, 384, 3, 3, 1, 1),
        (256, 256, 3, 3, 1, 1),
    ]
    assert all(s[1:] == (3, 2) for s in seen if s[0] == "pool")


def test_verify_reports_pass(exported):
    assert "verify: max abs deviation" in exported.stdout
    assert "wrote" in exported.stdout


def test_probe_archive_shapes(exported):
    data = np.load(exported.probes)
    inputs = data["inputs"]
    assert inputs.shape == (2, 3, 64, 64)
    assert inputs.dtype == np.float32
    assert float(inputs.min()) >= 0.0 and float(inputs.max()) <= 1.0
    per_tap = {1: (64, 15, 15), 2: (192, 7, 7), 3: (384, 3, 3),
               4: (256, 3, 3), 5: (256, 3, 3)}
    assert set(data.files) == {"inputs"} | {
        f"probe{i}_tap{t}" for i in range(2) for t in per_tap
    }
    for i in range(2):
        for t, shape in per_tap.items():
            assert data[f"probe{i}_tap{t}"].shape == shape


def test_same_seed_same_bytes(tmp_path):
    a, b, c = (tmp_path / n for n in ("a.spwt", "b.spwt", "c.spwt"))
    assert _run("--model", "alexnet", "--out", str(a), "--seed", "1").returncode == 0
    assert _run("--model", "alexnet", "--out", str(b), "--seed", "1").returncode == 0
    assert _run("--model", "alexnet", "--out", str(c), "--seed", "2").returncode == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_checkpoint_carries_weights(tmp_path):
    torch.manual_seed(5)
    model = torchvision.models.alexnet(weights=None)
    ckpt = tmp_path / "model.pth"
    torch.save(model.state_dict(), ckpt)

    from_ckpt = tmp_path / "ckpt.spwt"
    from_seed = tmp_path / "seed.spwt"
    r = _run("--model", "alexnet", "--out", str(from_ckpt), "--checkpoint", str(ckpt))
    assert r.returncode == 0, r.stderr
    assert _run("--model", "alexnet", "--out", str(from_seed), "--seed", "5").returncode == 0
    assert from_ckpt.read_bytes() == from_seed.read_bytes()


def test_missing_checkpoint_errors(tmp_path):
    r = _run("--model", "alexnet", "--out", str(tmp_path / "x.spwt"),
             "--checkpoint", str(tmp_path / "nope.pth"))
    assert r.returncode == 1
    assert "error:" in r.stderr


def test_usage_errors(tmp_path):
    assert _run().returncode == 2
    assert _run("--model", "resnet", "--out", str(tmp_path / "x.spwt")).returncode == 2


def test_roundtrip_matches_torch_in_process():
    features, taps, norm = ew.build_alexnet(None, 0)
    records = ew.snapshot_layers(features)
    probe = np.random.default_rng(3).random((3, 64, 64), dtype=np.float32)
    mine = ew.np_forward(records, taps, norm, probe)
    want = ew.torch_taps(features, taps, norm, probe)
    assert len(mine) == len(want) == 5
    for g, w in zip(mine, want):
        assert float(np.max(np.abs(g - w))) <= 1e-4


def test_verification_notices_damaged_weights(tmp_path):
    features, taps, norm = ew.build_alexnet(None, 0)
    records = ew.snapshot_layers(features)
    path = tmp_path / "a.spwt"
    ew.write_spwt(path, records, taps, norm)

    blob = bytearray(path.read_bytes())
    # first conv's weights start right after the 61-byte header and its
    # 25-byte layer record; blow away a handful of them
    start = 61 + 25
    blob[start:start + 400] = np.full(100, 1e3, dtype="<f4").tobytes()
    path.write_bytes(bytes(blob))

    probe = np.random.default_rng(4).random((3, 64, 64), dtype=np.float32)
    damaged = ew.np_forward(*ew.read_spwt(path), probe)
    want = ew.torch_taps(features, taps, norm, probe)
    worst = max(float(np.max(np.abs(g - w))) for g, w in zip(damaged, want))
    assert worst > 1e-4


def test_unrepresentable_modules_are_rejected():
    with pytest.raises(ValueError, match="grouped"):
        ew.snapshot_layers(nn.Sequential(nn.Conv2d(4, 4, 3, groups=2)))
    with pytest.raises(ValueError, match="dilation"):
        ew.snapshot_layers(nn.Sequential(nn.Conv2d(3, 4, 3, dilation=2)))
    with pytest.raises(ValueError, match="padded maxpool"):
        ew.snapshot_layers(nn.Sequential(nn.MaxPool2d(3, 2, padding=1)))
    with pytest.raises(ValueError, match="unsupported"):
        ew.snapshot_layers(nn.Sequential(nn.Flatten()))
