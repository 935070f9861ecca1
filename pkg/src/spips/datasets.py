"""Manifest ingestion, PNG decoding, and the synthetic 2AFC corpus.

Manifests are plain CSV (UTF-8, LF), with image paths relative to the
manifest's own directory:

    2AFC: id,category,ref,p0,p1,judge,split
    JND:  id,category,img0,img1,diff_fraction

Rows are validated eagerly (ranges, path existence, matching image sizes via
a header-only probe); pixel data is decoded only when asked for.

The synthetic corpus exists so training and evaluation can be exercised at
desk scale: procedural 64x64 textures, two noisy versions per reference at
distinct noise levels, and a judge label that prefers the cleaner image but
is flipped with probability 0.1 to emulate annotator noise.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError
from .tensor import Tensor

__all__ = [
    "Category",
    "ManifestKind",
    "TwoAFCSample",
    "JNDSample",
    "load_manifest",
    "decode_image",
    "procedural_texture",
    "synth_2afc",
    "SIGMA_GRID",
]


class Category(enum.Enum):
    TRAD = "Trad"
    CNN = "CNN"
    DEBLUR = "Deblur"
    INTERP = "Interp"
    SR = "SR"
    COLOR = "Color"
    SYNTH = "Synth"


class ManifestKind(enum.Enum):
    TWOAFC = "twoafc"
    JND = "jnd"


_JND_CATEGORIES = (Category.TRAD, Category.CNN)
_SPLITS = ("train", "val")

_TWOAFC_HEADER = ["id", "category", "ref", "p0", "p1", "judge", "split"]
_JND_HEADER = ["id", "category", "img0", "img1", "diff_fraction"]


@dataclass(frozen=True)
class TwoAFCSample:
    id: str
    category: Category
    ref_path: Path
    p0_path: Path
    p1_path: Path
    judge: float  # fraction of annotators preferring image1
    split: str  # "train" or "val"

    def load_images(self):
        """Decode (ref, image0, image1)."""
        return (
            decode_image(self.ref_path),
            decode_image(self.p0_path),
            decode_image(self.p1_path),
        )


@dataclass(frozen=True)
class JNDSample:
    id: str
    category: Category
    img0_path: Path
    img1_path: Path
    diff_fraction: float  # fraction of annotators judging "different"

    def load_images(self):
        return decode_image(self.img0_path), decode_image(self.img1_path)


def _probe_size(path: Path, row: int):
    """Image dimensions from the file header, without decoding pixels."""
    if not path.is_file():
        raise DataError(f"row {row}: image file not found: {path}")
    try:
        with Image.open(path) as img:
            return img.size
    except UnidentifiedImageError as exc:
        raise DataError(f"row {row}: unreadable image {path}: {exc}") from exc


def _parse_fraction(raw: str, column: str, row: int) -> float:
    try:
        value = float(raw)
    except ValueError as exc:
        raise DataError(f"row {row}: {column} is not a number: {raw!r}") from exc
    if math.isnan(value) or not 0.0 <= value <= 1.0:
        raise DataError(f"row {row}: {column} must lie in [0, 1], got {raw}")
    return value


def _parse_category(raw: str, row: int, allowed) -> Category:
    for cat in allowed:
        if raw == cat.value:
            return cat
    names = ", ".join(c.value for c in allowed)
    raise DataError(f"row {row}: unknown category {raw!r} (expected one of: {names})")


def load_manifest(path, kind: ManifestKind):
    """Read and validate a manifest; returns samples in file order."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    expected = _TWOAFC_HEADER if kind is ManifestKind.TWOAFC else _JND_HEADER
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"manifest {path.name} is empty") from None
        for column in expected:
            if column not in header:
                raise DataError(f"manifest {path.name} is missing column {column!r}")
        if header != expected:
            raise DataError(
                f"manifest {path.name} header must be exactly {','.join(expected)}"
            )
        samples = []
        seen_ids = set()
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise DataError(
                    f"row {row_num}: expected {len(expected)} fields, got {len(row)}"
                )
            sample_id = row[0]
            if not sample_id:
                raise DataError(f"row {row_num}: empty id")
            if sample_id in seen_ids:
                raise DataError(f"row {row_num}: duplicate id {sample_id!r}")
            seen_ids.add(sample_id)
            if kind is ManifestKind.TWOAFC:
                category = _parse_category(row[1], row_num, tuple(Category))
                paths = [base / p for p in row[2:5]]
                if len({p.resolve() for p in paths}) != 3:
                    raise DataError(f"row {row_num}: ref/p0/p1 paths must be distinct")
                judge = _parse_fraction(row[5], "judge", row_num)
                split = row[6]
                if split not in _SPLITS:
                    raise DataError(
                        f"row {row_num}: split must be 'train' or 'val', got {split!r}"
                    )
                sizes = {_probe_size(p, row_num) for p in paths}
                if len(sizes) != 1:
                    raise DataError(
                        f"row {row_num}: images have mismatched sizes {sorted(sizes)}"
                    )
                samples.append(
                    TwoAFCSample(sample_id, category, paths[0], paths[1], paths[2], judge, split)
                )
            else:
                category = _parse_category(row[1], row_num, _JND_CATEGORIES)
                img0 = base / row[2]
                img1 = base / row[3]
                diff = _parse_fraction(row[4], "diff_fraction", row_num)
                if _probe_size(img0, row_num) != _probe_size(img1, row_num):
                    raise DataError(f"row {row_num}: images have mismatched sizes")
                samples.append(JNDSample(sample_id, category, img0, img1, diff))
    return samples


def decode_image(path) -> Tensor:
    """PNG file to a 3xHxW tensor in [0, 1].

    8-bit channels scale by 1/255, 16-bit grayscale by 1/65535; grayscale is
    replicated to three channels and alpha is dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image file not found: {path}")
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                raise DataError(f"unsupported image format {img.format!r} for {path.name} (PNG only)")
            if img.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(img, dtype=np.float64) / 65535.0
            else:
                if img.mode in ("RGBA", "P"):
                    img = img.convert("RGB")
                elif img.mode in ("LA", "1"):
                    img = img.convert("L")
                if img.mode not in ("RGB", "L"):
                    raise DataError(f"unsupported PNG mode {img.mode!r} for {path.name}")
                arr = np.asarray(img, dtype=np.float64) / 255.0
    except UnidentifiedImageError as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = np.stack([arr, arr, arr])
    elif arr.ndim == 3:
        arr = arr[:, :, :3].transpose(2, 0, 1)
    else:
        raise DataError(f"unexpected PNG array shape {arr.shape} for {path.name}")
    return Tensor(np.clip(arr, 0.0, 1.0))


# Noise levels for the synthetic corpus.  A coarse grid (rather than a
# continuous draw) keeps every pair's sigma gap large enough that the
# preference signal is learnable at desk scale.
SIGMA_GRID = (0.02, 0.05, 0.08, 0.12, 0.18, 0.25, 0.30)

_FLIP_RATE = 0.1


def procedural_texture(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Random texture: an oriented gradient plus a few Gabor patches.

    Returns (3, size, size) float32 inside [0.08, 0.9], leaving headroom so
    additive noise rarely clips.
    """
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="ij")
    theta = rng.uniform(0.0, 2.0 * math.pi)
    canvas = rng.uniform(0.3, 1.0) * (
        (xx * math.cos(theta) + yy * math.sin(theta)) / size
    )
    for _ in range(int(rng.integers(3, 7))):
        cx, cy = rng.uniform(0.0, size, size=2)
        wavelength = rng.uniform(6.0, 18.0)
        spread = rng.uniform(4.0, 12.0)
        orient = rng.uniform(0.0, math.pi)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        amp = rng.uniform(0.4, 1.0)
        xr = (xx - cx) * math.cos(orient) + (yy - cy) * math.sin(orient)
        yr = -(xx - cx) * math.sin(orient) + (yy - cy) * math.cos(orient)
        envelope = np.exp(-(xr * xr + yr * yr) / (2.0 * spread * spread))
        canvas = canvas + amp * envelope * np.cos(2.0 * math.pi * xr / wavelength + phase)
    lo = canvas.min()
    hi = canvas.max()
    if hi - lo < 1e-9:
        canvas = np.full_like(canvas, 0.5)
    else:
        canvas = 0.1 + 0.8 * (canvas - lo) / (hi - lo)
    gains = rng.uniform(0.8, 1.0, size=3)
    return np.stack([canvas * g for g in gains]).astype(np.float32)


def _save_png(arr: np.ndarray, path: Path) -> None:
    quantized = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def synth_2afc(outdir, n: int, seed: int) -> Path:
    """Generate an n-sample 2AFC corpus with known preferences.

    Per sample: a procedural reference, two noisy copies at distinct sigma
    levels, judge = 1 if image1 is the cleaner one (flipped with probability
    0.1).  Same (n, seed) reproduces identical bytes.  Returns the manifest
    path.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        ref = procedural_texture(rng)
        si0, si1 = rng.choice(len(SIGMA_GRID), size=2, replace=False)
        sigma0 = SIGMA_GRID[int(si0)]
        sigma1 = SIGMA_GRID[int(si1)]
        img0 = ref + rng.normal(0.0, sigma0, size=ref.shape).astype(np.float32)
        img1 = ref + rng.normal(0.0, sigma1, size=ref.shape).astype(np.float32)
        judge = 1.0 if sigma1 < sigma0 else 0.0
        if rng.random() < _FLIP_RATE:
            judge = 1.0 - judge
        sample_id = f"synth{i:04d}"
        names = (f"{sample_id}_ref.png", f"{sample_id}_p0.png", f"{sample_id}_p1.png")
        _save_png(ref, outdir / names[0])
        _save_png(img0, outdir / names[1])
        _save_png(img1, outdir / names[2])
        rows.append([sample_id, Category.SYNTH.value, *names, f"{judge:.1f}", "train"])
    manifest = outdir / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_TWOAFC_HEADER)
        writer.writerows(rows)
    return manifest
