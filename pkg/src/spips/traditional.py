"""Inverted, normalized per-pixel quality maps from classical metrics.

Every map lives in [0, 1] with the convention that lower values mean higher
local quality, so higher-is-better metric values are inverted after
normalization:

* psnr_map   - per-pixel squared error pushed through the PSNR formula and a
               fixed 50 dB cap (per-image min-max would degenerate on
               identical images and make scores incomparable across images).
* ssim_map   - local SSIM per RGB channel, Gaussian window 11, sigma 1.5.
* msssim_map - multi-scale pyramid on the luminance plane; one channel per
               scale, so the channel count equals the scale count.

Internals run in double precision and the final maps are emitted as float32
Tensors; the extra precision is what lets the suite compare map means against
independent reference implementations at 1e-6.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, resize_bilinear

__all__ = [
    "MapSource",
    "QualityMap",
    "psnr_map",
    "ssim_map",
    "msssim_map",
    "msssim_scalar",
    "max_msssim_scales",
    "MSSSIM_WEIGHTS",
]

# SSIM constants: window 11, sigma 1.5, K1=0.01, K2=0.03, dynamic range 1.0.
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_C1 = (0.01 * 1.0) ** 2
_C2 = (0.03 * 1.0) ** 2

# PSNR: epsilon floor on the squared error and the dB value treated as "perfect".
PSNR_EPS = 1e-10
PSNR_CAP_DB = 50.0

# Standard multi-scale exponents for 5 scales, finest to coarsest.  For fewer
# scales the LAST entries are used, so a single-scale pyramid gets 0.1333 (the
# full-SSIM exponent).
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

_SOURCE_KINDS = ("psnr", "ssim", "msssim", "deep")


@dataclass(frozen=True)
class MapSource:
    """Which construction produced a quality map; deep maps carry a tap index."""

    kind: str
    layer: int | None = None

    def __post_init__(self):
        if self.kind not in _SOURCE_KINDS:
            raise ValueError(f"unknown map source kind {self.kind!r}")
        if (self.kind == "deep") != (self.layer is not None):
            raise ValueError("layer index is required for deep sources and only those")


@dataclass(frozen=True)
class QualityMap:
    """Per-pixel difference map; lower value = higher local quality."""

    map: Tensor
    source: MapSource

    def __post_init__(self):
        data = self.map.data
        if data.ndim != 3:
            raise ValueError(f"quality map must be C,H,W, got shape {self.map.shape}")
        lo = float(data.min())
        if lo < 0.0:
            raise ValueError(f"quality map has negative entry {lo}")
        if self.source.kind != "deep" and float(data.max()) > 1.0:
            raise ValueError("traditional quality maps must stay within [0, 1]")


def _check_pair(eval_img: Tensor, ref_img: Tensor) -> None:
    for name, img in (("eval", eval_img), ("ref", ref_img)):
        if not isinstance(img, Tensor) or img.rank != 3 or img.shape[0] != 3:
            got = img.shape if isinstance(img, Tensor) else type(img).__name__
            raise ValueError(f"{name} image must be a 3,H,W Tensor, got {got}")
        data = img.data
        if float(data.min()) < 0.0 or float(data.max()) > 1.0:
            raise ValueError(f"{name} image values must lie in [0, 1]")
    if eval_img.shape != ref_img.shape:
        raise ValueError(
            f"image shapes differ: eval {eval_img.shape} vs ref {ref_img.shape}"
        )


def psnr_map(eval_img: Tensor, ref_img: Tensor) -> QualityMap:
    """Per-pixel PSNR quality map: Q = 1 - clamp(psnr_db/50, 0, 1)."""
    _check_pair(eval_img, ref_img)
    e = eval_img.data.astype(np.float64)
    r = ref_img.data.astype(np.float64)
    se = (e - r) ** 2
    db = 10.0 * np.log10(1.0 / np.maximum(se, PSNR_EPS))
    q = 1.0 - np.clip(db / PSNR_CAP_DB, 0.0, 1.0)
    return QualityMap(Tensor(q), MapSource("psnr"))


def _window_1d() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    coords = np.arange(SSIM_WINDOW, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return g / g.sum()


def _correlate_same(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    # separable "same"-size windowed sum with zero padding, float64
    r = len(win) // 2
    out = x
    for axis in (0, 1):
        padding = [(0, 0), (0, 0)]
        padding[axis] = (r, r)
        padded = np.pad(out, padding)
        view = np.lib.stride_tricks.sliding_window_view(padded, len(win), axis=axis)
        out = view @ win
    return out


def _ssim_parts(x: np.ndarray, y: np.ndarray, win: np.ndarray):
    """Luminance and contrast-structure planes of the local SSIM index.

    The algebra is arranged so that bitwise-identical inputs give exactly 1.0
    everywhere (numerator and denominator become the same float), which is
    what makes Q(I, I) exactly zero.
    """
    mu_x = _correlate_same(x, win)
    mu_y = _correlate_same(y, win)
    xx = _correlate_same(x * x, win)
    yy = _correlate_same(y * y, win)
    xy = _correlate_same(x * y, win)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    lum = (2.0 * (mu_x * mu_y) + _C1) / ((mu_x * mu_x + mu_y * mu_y) + _C1)
    cs = (2.0 * cov + _C2) / ((var_x + var_y) + _C2)
    return lum, cs


def ssim_map(eval_img: Tensor, ref_img: Tensor) -> QualityMap:
    """Per-channel local SSIM quality map: Q = 1 - clamp(SSIM, 0, 1)."""
    _check_pair(eval_img, ref_img)
    _, h, w = eval_img.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(
            f"image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    win = _window_1d()
    e = eval_img.data.astype(np.float64)
    r = ref_img.data.astype(np.float64)
    channels = []
    for c in range(3):
        lum, cs = _ssim_parts(e[c], r[c], win)
        ssim = np.clip(lum * cs, 0.0, 1.0)
        channels.append(1.0 - ssim)
    return QualityMap(Tensor(np.stack(channels)), MapSource("ssim"))


def max_msssim_scales(h: int, w: int) -> int:
    """Largest usable scale count (capped at 5) for an HxW image."""
    scales = 0
    extent = SSIM_WINDOW
    while min(h, w) >= extent and scales < 5:
        scales += 1
        extent *= 2
    return scales


def _half(x: np.ndarray) -> np.ndarray:
    he, we = x.shape[0] // 2, x.shape[1] // 2
    v = x[: 2 * he, : 2 * we]
    return (v[0::2, 0::2] + v[1::2, 0::2] + v[0::2, 1::2] + v[1::2, 1::2]) * 0.25


def _msssim_stage_maps(eval_img: Tensor, ref_img: Tensor, scales: int):
    """Raw per-scale index maps (cs below the top scale, full SSIM at the top)."""
    _check_pair(eval_img, ref_img)
    if not isinstance(scales, int) or scales < 1:
        raise ValueError(f"scales must be a positive int, got {scales!r}")
    if scales > len(MSSSIM_WEIGHTS):
        raise ValueError(f"at most {len(MSSSIM_WEIGHTS)} scales are supported")
    _, h, w = eval_img.shape
    needed = SSIM_WINDOW * 2 ** (scales - 1)
    if min(h, w) < needed:
        raise ValueError(
            f"image {h}x{w} too small for {scales} scales (needs at least {needed})"
        )
    win = _window_1d()
    lum_e = eval_img.data.astype(np.float64).mean(axis=0)
    lum_r = ref_img.data.astype(np.float64).mean(axis=0)
    stages = []
    for s in range(1, scales + 1):
        lum, cs = _ssim_parts(lum_e, lum_r, win)
        stages.append(lum * cs if s == scales else cs)
        if s < scales:
            lum_e = _half(lum_e)
            lum_r = _half(lum_r)
    return stages


def msssim_map(eval_img: Tensor, ref_img: Tensor, scales: int = 5) -> QualityMap:
    """Multi-scale quality map, one inverted channel per scale.

    Each per-scale index map is clamped to [0, 1] (negative structure values
    would turn the fractional exponent into NaN), raised elementwise to the
    scale's exponent, upsampled to the input size, clamped again, and
    inverted.
    """
    stages = _msssim_stage_maps(eval_img, ref_img, scales)
    weights = MSSSIM_WEIGHTS[len(MSSSIM_WEIGHTS) - scales:]
    _, h, w = eval_img.shape
    channels = []
    for stage, weight in zip(stages, weights):
        powered = np.clip(stage, 0.0, 1.0) ** weight
        up = resize_bilinear(Tensor(powered[None, :, :]), h, w)
        channels.append(1.0 - np.clip(up.data[0], 0.0, 1.0))
    return QualityMap(Tensor(np.stack(channels)), MapSource("msssim"))


def msssim_scalar(eval_img: Tensor, ref_img: Tensor, scales: int = 5) -> float:
    """Classical scalar MS-SSIM: product over scales of mean index ** exponent.

    Means are taken over each scale's native-resolution map before the
    exponent is applied, matching the standard composition.
    """
    stages = _msssim_stage_maps(eval_img, ref_img, scales)
    weights = MSSSIM_WEIGHTS[len(MSSSIM_WEIGHTS) - scales:]
    value = 1.0
    for stage, weight in zip(stages, weights):
        value *= max(float(stage.mean()), 0.0) ** weight
    return value
