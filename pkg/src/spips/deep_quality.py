"""Squared feature-difference maps and their perceptual/semantic grouping.

A deep quality map at layer l is (F_eval - F_ref) squared elementwise, so it
is non-negative and symmetric in its arguments.  With L tapped layers, the
first L-2 maps form the perceptual group (texture/detail differences) and the
last two the semantic group (scene-level content differences); no channel
normalization is applied before differencing.
"""

from __future__ import annotations

from dataclasses import dataclass

from .backbone import FeaturePyramid
from .tensor import Tensor
from .traditional import MapSource, QualityMap

__all__ = ["QualityGroups", "deep_maps", "split_groups"]


@dataclass(frozen=True)
class QualityGroups:
    """The three map groups consumed by the fusion head."""

    tradition: tuple  # (psnr, ssim, msssim) QualityMaps, in that order
    percept: tuple  # L-2 deep QualityMaps
    semantic: tuple  # 2 deep QualityMaps

    def __post_init__(self):
        kinds = tuple(m.source.kind for m in self.tradition)
        if kinds != ("psnr", "ssim", "msssim"):
            raise ValueError(f"tradition group must be (psnr, ssim, msssim), got {kinds}")
        if len(self.semantic) != 2:
            raise ValueError(f"semantic group must hold 2 maps, got {len(self.semantic)}")
        if len(self.percept) < 1:
            raise ValueError("percept group must hold at least 1 map")
        for m in self.percept + self.semantic:
            if m.source.kind != "deep":
                raise ValueError("percept/semantic groups must hold deep maps")


def deep_maps(f_eval: FeaturePyramid, f_ref: FeaturePyramid) -> list:
    """Per-layer squared difference of two pyramids from the same backbone."""
    if len(f_eval) != len(f_ref):
        raise ValueError(
            f"pyramid lengths differ: {len(f_eval)} vs {len(f_ref)}"
        )
    maps = []
    for layer, (fe, fr) in enumerate(zip(f_eval.features, f_ref.features), start=1):
        if fe.shape != fr.shape:
            raise ValueError(
                f"layer {layer} shape mismatch: {fe.shape} vs {fr.shape}"
            )
        diff = fe.data - fr.data
        maps.append(QualityMap(Tensor(diff * diff), MapSource("deep", layer)))
    return maps


def split_groups(deep: list, trad: list) -> QualityGroups:
    """Partition L deep maps into percept (1..L-2) and semantic (L-1, L)."""
    length = len(deep)
    if length < 3:
        raise ValueError(f"need at least 3 deep maps to split, got {length}")
    return QualityGroups(
        tradition=tuple(trad),
        percept=tuple(deep[: length - 2]),
        semantic=tuple(deep[length - 2 :]),
    )
