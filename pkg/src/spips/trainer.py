"""Fit the fusion head on 2AFC samples by minibatch gradient descent.

The backbone stays frozen, so every sample's quality-map groups are computed
once (optionally persisted in an .npz cache keyed by sample id and backbone
name) and the optimization loop touches only head parameters.  Everything
downstream of the seed is deterministic: init noise, the 90/10 split, epoch
shuffles, and optimizer state all flow from TrainConfig.seed, so identical
configs reproduce identical heads bitwise.

Model selection is by held-out loss: the returned head is the epoch-end state
with the lowest validation loss, not the last one.
"""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import BackboneSpec, extract_features
from .datasets import TwoAFCSample, decode_image
from .deep_quality import deep_maps, split_groups
from .errors import DataError, NumericError
from .fusion import (
    GROUP_NAMES,
    Ablation,
    FusionHead,
    init_head,
    loss_and_gradients,
    score,
)
from .tensor import Tensor
from .traditional import (
    MapSource,
    QualityMap,
    max_msssim_scales,
    msssim_map,
    psnr_map,
    ssim_map,
)

__all__ = [
    "Optimizer",
    "TrainConfig",
    "TrainReport",
    "compute_groups",
    "precompute_groups",
    "train",
    "twoafc_accuracy",
    "write_metrics_tsv",
]

_A_FLOOR = 1e-6  # comparator scale is kept strictly positive


class Optimizer(enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-2
    seed: int = 0
    ablation: Ablation = Ablation.FULL
    optimizer: Optimizer = Optimizer.ADAM
    cache_dir: Path | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        # zero is allowed (a no-op run is well defined); negative is not
        if not self.learning_rate >= 0.0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")


@dataclass(frozen=True)
class TrainReport:
    epoch_losses: list  # mean per-sample training loss, one entry per epoch
    val_losses: list
    val_accuracies: list
    best_epoch: int  # 0-based index of the epoch the returned head comes from
    holdout_accuracy: float


def compute_groups(spec: BackboneSpec, eval_img: Tensor, ref_img: Tensor,
                   msssim_scales: int) -> "QualityGroups":
    """Quality-map groups for one eval/ref pair."""
    trad = [
        psnr_map(eval_img, ref_img),
        ssim_map(eval_img, ref_img),
        msssim_map(eval_img, ref_img, scales=msssim_scales),
    ]
    deep = deep_maps(extract_features(spec, eval_img), extract_features(spec, ref_img))
    return split_groups(deep, trad)


def _cache_path(cache_dir: Path, sample_id: str, spec_name: str, scales: int) -> Path:
    safe = re.sub(r"[^A-Za-z0-9._-]", "_", sample_id)[:48]
    digest = hashlib.blake2s(sample_id.encode("utf-8")).hexdigest()[:8]
    return cache_dir / f"{safe}-{digest}__{spec_name}_s{scales}.npz"


def _groups_to_arrays(prefix: str, groups) -> dict:
    arrays = {}
    for qmap in groups.tradition:
        arrays[f"{prefix}_{qmap.source.kind}"] = qmap.map.data
    for qmap in groups.percept + groups.semantic:
        arrays[f"{prefix}_deep_{qmap.source.layer:02d}"] = qmap.map.data
    return arrays


def _groups_from_arrays(prefix: str, arrays) -> "QualityGroups":
    trad = [
        QualityMap(Tensor(arrays[f"{prefix}_{kind}"]), MapSource(kind))
        for kind in ("psnr", "ssim", "msssim")
    ]
    deep_keys = sorted(k for k in arrays if k.startswith(f"{prefix}_deep_"))
    deep = [
        QualityMap(Tensor(arrays[k]), MapSource("deep", int(k.rsplit("_", 1)[1])))
        for k in deep_keys
    ]
    return split_groups(deep, trad)


def precompute_groups(spec: BackboneSpec, sample: TwoAFCSample, *,
                      msssim_scales: int | None = None,
                      cache_dir=None):
    """Groups for (image0 vs ref) and (image1 vs ref), cached when possible.

    With msssim_scales=None the scale count adapts to the image size (5 at
    256 pixels and up, fewer for small images).
    """
    try:
        ref = decode_image(sample.ref_path)
    except DataError as exc:
        raise DataError(f"sample {sample.id}: {exc}") from exc
    if msssim_scales is None:
        msssim_scales = min(5, max_msssim_scales(ref.shape[1], ref.shape[2]))

    cache_file = None
    if cache_dir is not None:
        cache_file = _cache_path(Path(cache_dir), sample.id, spec.name, msssim_scales)
        if cache_file.is_file():
            with np.load(cache_file) as z:
                return _groups_from_arrays("a", z), _groups_from_arrays("b", z)

    try:
        img0 = decode_image(sample.p0_path)
        img1 = decode_image(sample.p1_path)
    except DataError as exc:
        raise DataError(f"sample {sample.id}: {exc}") from exc
    f_ref = extract_features(spec, ref)
    out = []
    for img in (img0, img1):
        trad = [
            psnr_map(img, ref),
            ssim_map(img, ref),
            msssim_map(img, ref, scales=msssim_scales),
        ]
        deep = deep_maps(extract_features(spec, img), f_ref)
        out.append(split_groups(deep, trad))
    groups0, groups1 = out

    if cache_file is not None:
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        arrays = _groups_to_arrays("a", groups0)
        arrays.update(_groups_to_arrays("b", groups1))
        np.savez(cache_file, **arrays)
    return groups0, groups1


def _param_layout(head: FusionHead):
    """(n_kernel_entries, total) sizes of the flat parameter vector."""
    n_kernel = 0
    for group in GROUP_NAMES:
        kernels = head.kernels(group)
        if kernels is None:
            continue
        for k in kernels:
            n_kernel += k.weights.size + 1
    return n_kernel, n_kernel + 3 + 2


def _param_vector(head: FusionHead) -> np.ndarray:
    parts = []
    for group in GROUP_NAMES:
        kernels = head.kernels(group)
        if kernels is None:
            continue
        for k in kernels:
            parts.append(k.weights)
            parts.append(np.array([k.bias]))
    parts.append(head.lambda_logits)
    parts.append(np.array([head.comparator_scale, head.comparator_bias]))
    return np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in parts])


def _apply_vector(head: FusionHead, vec: np.ndarray) -> None:
    off = 0
    for group in GROUP_NAMES:
        kernels = head.kernels(group)
        if kernels is None:
            continue
        for k in kernels:
            n = k.weights.size
            k.weights = vec[off : off + n].copy()
            off += n
            k.bias = float(vec[off])
            off += 1
    head.lambda_logits = vec[off : off + 3].copy()
    off += 3
    head.comparator_scale = float(vec[off])
    head.comparator_bias = float(vec[off + 1])


def _grad_vector(head: FusionHead, grads) -> np.ndarray:
    by_group = {"trad": grads.w_trad, "percept": grads.w_percept, "semantic": grads.w_semantic}
    parts = []
    for group in GROUP_NAMES:
        kernel_grads = by_group[group]
        if kernel_grads is None:
            continue
        for kg in kernel_grads:
            parts.append(kg.weights)
            parts.append(np.array([kg.bias]))
    parts.append(grads.lambda_logits)
    parts.append(np.array([grads.comparator_scale, grads.comparator_bias]))
    return np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in parts])


def _soft_accuracy(scores0, scores1, judges) -> float:
    """LPIPS-convention 2AFC credit: agree with the human fraction."""
    credits = []
    for s0, s1, h in zip(scores0, scores1, judges):
        if s1 < s0:
            m = 1.0
        elif s1 > s0:
            m = 0.0
        else:
            m = 0.5
        credits.append(m * h + (1.0 - m) * (1.0 - h))
    return float(sum(credits) / len(credits))


def _mean_loss(head, groups_list, judges) -> float:
    total = 0.0
    for pair, judge in zip(groups_list, judges):
        loss, _ = loss_and_gradients(head, pair, judge)
        total += loss
    return total / len(groups_list)


def _side_scores(head, groups_list):
    scores0 = [score(head, g0).score for g0, _ in groups_list]
    scores1 = [score(head, g1).score for _, g1 in groups_list]
    return scores0, scores1


def train(spec: BackboneSpec, samples, cfg: TrainConfig, *, kernels_only: bool = False):
    """Returns (best FusionHead, TrainReport).

    `kernels_only` freezes logits and the comparator, training just the
    per-map conv kernels; used by diagnostics and tests.
    """
    if not samples:
        raise DataError("training needs at least one sample")

    ref_probe = decode_image(samples[0].ref_path)
    msssim_scales = min(5, max_msssim_scales(ref_probe.shape[1], ref_probe.shape[2]))

    groups_list = []
    for sample in samples:
        groups_list.append(
            precompute_groups(spec, sample, msssim_scales=msssim_scales,
                              cache_dir=cfg.cache_dir)
        )
    judges = [s.judge for s in samples]

    head = init_head(spec, cfg.seed, msssim_scales=msssim_scales, ablation=cfg.ablation)
    rng = np.random.default_rng(cfg.seed)

    n = len(samples)
    perm = rng.permutation(n)
    n_val = n // 10 if n >= 2 else 0
    if n_val > 0:
        val_idx = perm[:n_val]
        train_idx = perm[n_val:]
    else:
        # too few samples to hold anything out; validate on the train set
        val_idx = perm
        train_idx = perm

    n_kernel, n_total = _param_layout(head)
    theta = _param_vector(head)
    a_pos = n_total - 2  # comparator scale position in the flat vector
    m = np.zeros(n_total)
    v = np.zeros(n_total)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    epoch_losses = []
    val_losses = []
    val_accuracies = []
    best_theta = theta.copy()
    best_val = np.inf
    best_epoch = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(train_idx)
        loss_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grad = np.zeros(n_total)
            for i in batch:
                loss, grads = loss_and_gradients(head, groups_list[i], judges[i])
                if not np.isfinite(loss):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch + 1}, sample {samples[i].id}"
                    )
                loss_sum += loss
                grad += _grad_vector(head, grads)
            grad /= len(batch)
            if kernels_only:
                grad[n_kernel:] = 0.0
            if cfg.optimizer is Optimizer.ADAM:
                step += 1
                m = beta1 * m + (1.0 - beta1) * grad
                v = beta2 * v + (1.0 - beta2) * grad * grad
                m_hat = m / (1.0 - beta1**step)
                v_hat = v / (1.0 - beta2**step)
                theta = theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
            else:
                theta = theta - cfg.learning_rate * grad
            theta[a_pos] = max(theta[a_pos], _A_FLOOR)
            _apply_vector(head, theta)

        epoch_losses.append(loss_sum / len(train_idx))
        val_groups = [groups_list[i] for i in val_idx]
        val_judges = [judges[i] for i in val_idx]
        val_loss = _mean_loss(head, val_groups, val_judges)
        if not np.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch + 1}")
        val_losses.append(val_loss)
        val_accuracies.append(_soft_accuracy(*_side_scores(head, val_groups), val_judges))
        if val_loss < best_val:
            best_val = val_loss
            best_theta = theta.copy()
            best_epoch = epoch

    _apply_vector(head, best_theta)
    report = TrainReport(
        epoch_losses=epoch_losses,
        val_losses=val_losses,
        val_accuracies=val_accuracies,
        best_epoch=best_epoch,
        holdout_accuracy=val_accuracies[best_epoch],
    )
    return head, report


def twoafc_accuracy(head: FusionHead, samples, spec: BackboneSpec, *,
                    cache_dir=None) -> float:
    """Soft 2AFC accuracy of the head over the samples."""
    if not samples:
        raise ValueError("accuracy needs at least one sample")
    scales = head.msssim_scales()
    groups_list = [
        precompute_groups(spec, s, msssim_scales=scales, cache_dir=cache_dir)
        for s in samples
    ]
    judges = [s.judge for s in samples]
    return _soft_accuracy(*_side_scores(head, groups_list), judges)


def write_metrics_tsv(report: TrainReport, path) -> None:
    """One line per epoch: epoch, train_loss, val_loss, val_acc."""
    lines = []
    for i, (tl, vl, va) in enumerate(
        zip(report.epoch_losses, report.val_losses, report.val_accuracies), start=1
    ):
        lines.append(f"{i}\t{tl:.6f}\t{vl:.6f}\t{va:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
