"""The trainable fusion head.

Each quality map is collapsed to a scalar by a per-map 1x1 convolution
(channel dot product plus bias), a ReLU, and a spatial mean; group means are
combined by softmax-simplex weights lambda into the final lower-is-better
score.  A two-parameter logistic on the score difference turns a pair of
scores into a 2AFC preference probability, trained with binary cross-entropy.

Gradients are derived by hand through the mean-ReLU-conv-softmax chain (there
is deliberately no autodiff anywhere in this package).  Head parameters are
held in float64 while training and serialized as float32 in the .spht format.

.spht byte layout (little-endian):

    magic "SPHT", u32 version=1, u8 ablation (0=FULL, 1=NO_SEMANTIC,
    2=NO_TRADITION), u32 n_kernels, per kernel: u32 group (0=trad, 1=percept,
    2=semantic), u32 in_channels, in_channels x f32 weights, f32 bias;
    then 3 x f32 lambda_logits (absent groups hold the sentinel -1e30),
    f32 a (comparator scale), f32 b (comparator bias).
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import BackboneSpec
from .deep_quality import QualityGroups
from .errors import FormatError

__all__ = [
    "Ablation",
    "Kernel1x1",
    "FusionHead",
    "ScoreBreakdown",
    "KernelGrad",
    "FusionHeadGradients",
    "ablate",
    "init_head",
    "score",
    "compare_2afc",
    "loss_and_gradients",
    "save_head",
    "load_head",
    "GROUP_NAMES",
]

MAGIC = b"SPHT"
VERSION = 1
LOGIT_SENTINEL = -1e30  # marks lambda slots of groups an ablation removed

GROUP_NAMES = ("trad", "percept", "semantic")


class Ablation(enum.Enum):
    FULL = "full"
    NO_SEMANTIC = "no-semantic"
    NO_TRADITION = "no-tradition"


_ABLATION_CODES = {Ablation.FULL: 0, Ablation.NO_SEMANTIC: 1, Ablation.NO_TRADITION: 2}
_CODE_ABLATIONS = {v: k for k, v in _ABLATION_CODES.items()}


def ablate(config: Ablation) -> tuple:
    """Active group names under an ablation configuration.

    Dropping a group removes its kernels and its lambda slot; the softmax
    renormalizes over whatever remains, so the surviving weights still sum
    to one.
    """
    if config is Ablation.NO_SEMANTIC:
        return ("trad", "percept")
    if config is Ablation.NO_TRADITION:
        return ("percept", "semantic")
    return GROUP_NAMES


@dataclass
class Kernel1x1:
    """One per-map kernel: a channel-weight vector and a scalar bias."""

    weights: np.ndarray  # (in_channels,) float64
    bias: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1 or self.weights.size < 1:
            raise ValueError("kernel weights must be a non-empty vector")
        self.bias = float(self.bias)


@dataclass
class FusionHead:
    """Trainable parameters; kernels exist only for active groups."""

    ablation: Ablation
    w_trad: list | None
    w_percept: list
    w_semantic: list | None
    lambda_logits: np.ndarray  # (3,) float64, sentinel at inactive slots
    comparator_scale: float  # a > 0
    comparator_bias: float  # b

    def __post_init__(self):
        self.lambda_logits = np.asarray(self.lambda_logits, dtype=np.float64)
        if self.lambda_logits.shape != (3,):
            raise ValueError("lambda_logits must hold exactly 3 values")
        active = ablate(self.ablation)
        if ("trad" in active) != (self.w_trad is not None):
            raise ValueError("trad kernels must be present exactly when the group is active")
        if ("semantic" in active) != (self.w_semantic is not None):
            raise ValueError("semantic kernels must be present exactly when the group is active")
        if self.w_trad is not None and len(self.w_trad) != 3:
            raise ValueError(f"trad group needs 3 kernels, got {len(self.w_trad)}")
        if self.w_semantic is not None and len(self.w_semantic) != 2:
            raise ValueError(f"semantic group needs 2 kernels, got {len(self.w_semantic)}")
        if len(self.w_percept) < 1:
            raise ValueError("percept group needs at least 1 kernel")
        if not self.comparator_scale > 0:
            raise ValueError(f"comparator scale must be positive, got {self.comparator_scale}")

    def kernels(self, group: str):
        return {"trad": self.w_trad, "percept": self.w_percept, "semantic": self.w_semantic}[group]

    def active_groups(self) -> tuple:
        return ablate(self.ablation)

    def lambdas(self) -> np.ndarray:
        """Softmax over the active logits; inactive slots are exactly 0."""
        out = np.zeros(3, dtype=np.float64)
        idx = [i for i, g in enumerate(GROUP_NAMES) if g in self.active_groups()]
        z = self.lambda_logits[idx]
        z = z - z.max()
        e = np.exp(z)
        out[idx] = e / e.sum()
        return out

    def msssim_scales(self) -> int | None:
        """Scale count the head was built for, read off its msssim kernel."""
        if self.w_trad is None:
            return None
        return int(self.w_trad[2].weights.size)


@dataclass(frozen=True)
class ScoreBreakdown:
    f_trad_mean: float
    f_percept_mean: float
    f_semantic_mean: float
    lambdas: tuple
    score: float


@dataclass
class KernelGrad:
    weights: np.ndarray  # (in_channels,) float64
    bias: float


@dataclass
class FusionHeadGradients:
    """dLoss/dTheta, mirroring the FusionHead parameter layout."""

    w_trad: list | None
    w_percept: list
    w_semantic: list | None
    lambda_logits: np.ndarray
    comparator_scale: float
    comparator_bias: float


def init_head(
    spec: BackboneSpec,
    seed: int,
    *,
    msssim_scales: int = 5,
    ablation: Ablation = Ablation.FULL,
    kernel_noise: bool = True,
) -> FusionHead:
    """Seeded head: channel-averaging kernels plus U(-0.01, 0.01) noise.

    Biases start at 0, logits at (0, 0, 0) (uniform lambda), comparator at
    a=1, b=0.  `kernel_noise=False` gives the exact channel-mean kernels,
    which tests use to make hand arithmetic possible.
    """
    if not isinstance(msssim_scales, int) or not 1 <= msssim_scales <= 5:
        raise ValueError(f"msssim_scales must be an int in 1..5, got {msssim_scales!r}")
    tap_channels = spec.tap_channels()
    if len(tap_channels) < 3:
        raise ValueError(
            f"backbone declares {len(tap_channels)} taps; head construction needs at least 3"
        )
    group_channels = {
        "trad": (3, 3, msssim_scales),
        "percept": tap_channels[: len(tap_channels) - 2],
        "semantic": tap_channels[len(tap_channels) - 2 :],
    }
    rng = np.random.default_rng(seed)
    active = ablate(ablation)
    kernels = {"trad": None, "percept": None, "semantic": None}
    for group in GROUP_NAMES:
        if group not in active:
            continue
        ks = []
        for c in group_channels[group]:
            w = np.full(c, 1.0 / c, dtype=np.float64)
            if kernel_noise:
                w = w + rng.uniform(-0.01, 0.01, size=c)
            ks.append(Kernel1x1(w, 0.0))
        kernels[group] = ks
    logits = np.zeros(3, dtype=np.float64)
    for i, g in enumerate(GROUP_NAMES):
        if g not in active:
            logits[i] = LOGIT_SENTINEL
    return FusionHead(
        ablation=ablation,
        w_trad=kernels["trad"],
        w_percept=kernels["percept"],
        w_semantic=kernels["semantic"],
        lambda_logits=logits,
        comparator_scale=1.0,
        comparator_bias=0.0,
    )


def _group_maps(groups: QualityGroups, group: str):
    source = {
        "trad": groups.tradition,
        "percept": groups.percept,
        "semantic": groups.semantic,
    }[group]
    return [m.map for m in source]


def _group_forward(head: FusionHead, groups: QualityGroups, keep_records: bool):
    """Per-group post-ReLU means, optionally with backprop records."""
    means = {"trad": 0.0, "percept": 0.0, "semantic": 0.0}
    records = {}
    for group in head.active_groups():
        kernels = head.kernels(group)
        maps = _group_maps(groups, group)
        if len(maps) != len(kernels):
            raise ValueError(
                f"{group} group has {len(maps)} maps but the head holds {len(kernels)} kernels"
            )
        map_means = []
        map_records = []
        for kernel, qmap in zip(kernels, maps):
            c = qmap.shape[0]
            if kernel.weights.size != c:
                raise ValueError(
                    f"{group} kernel expects {kernel.weights.size} channels, map has {c}"
                )
            flat = qmap.data.reshape(c, -1)
            z = kernel.weights @ flat + kernel.bias
            active_mask = z > 0.0
            f_m = float(np.where(active_mask, z, 0.0).mean())
            map_means.append(f_m)
            if keep_records:
                map_records.append((flat, active_mask))
        means[group] = sum(map_means) / len(map_means)
        if keep_records:
            records[group] = map_records
    return means, records


def score(head: FusionHead, groups: QualityGroups) -> ScoreBreakdown:
    """Lower-is-better fused score with its per-group decomposition."""
    means, _ = _group_forward(head, groups, keep_records=False)
    lam = head.lambdas()
    s = lam[0] * means["trad"] + lam[1] * means["percept"] + lam[2] * means["semantic"]
    return ScoreBreakdown(
        f_trad_mean=means["trad"],
        f_percept_mean=means["percept"],
        f_semantic_mean=means["semantic"],
        lambdas=tuple(float(v) for v in lam),
        score=float(s),
    )


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def compare_2afc(head: FusionHead, s0, s1) -> float:
    """Predicted probability that image1 is preferred (its score is lower)."""
    v0 = s0.score if isinstance(s0, ScoreBreakdown) else float(s0)
    v1 = s1.score if isinstance(s1, ScoreBreakdown) else float(s1)
    return _sigmoid(head.comparator_scale * (v0 - v1) + head.comparator_bias)


def loss_and_gradients(head: FusionHead, sample_groups, human: float):
    """Binary cross-entropy against the human vote, with hand-coded gradients.

    `sample_groups` is the (image0, image1) pair of QualityGroups; `human` is
    the fraction of annotators preferring image1.  Returns (loss, grads); the
    maps themselves are frozen inputs and receive no gradient.
    """
    if not 0.0 <= float(human) <= 1.0:
        raise ValueError(f"human vote must lie in [0, 1], got {human!r}")
    human = float(human)
    groups0, groups1 = sample_groups

    means = []
    records = []
    for g in (groups0, groups1):
        m, r = _group_forward(head, g, keep_records=True)
        means.append(m)
        records.append(r)

    lam = head.lambdas()
    sides = []
    for m in means:
        sides.append(lam[0] * m["trad"] + lam[1] * m["percept"] + lam[2] * m["semantic"])
    delta = sides[0] - sides[1]

    a = head.comparator_scale
    z = a * delta + head.comparator_bias
    p_hat = _sigmoid(z)
    # bce(human, sigmoid(z)) = softplus(z) - human*z, stable at any magnitude
    loss = float(np.logaddexp(0.0, z) - human * z)

    gz = p_hat - human
    d_score = (gz * a, -gz * a)  # dloss/dscore for image0, image1

    active = head.active_groups()
    grad_kernels = {"trad": None, "percept": None, "semantic": None}
    d_lambda = np.zeros(3, dtype=np.float64)
    for gi, group in enumerate(GROUP_NAMES):
        if group not in active:
            continue
        n_maps = len(head.kernels(group))
        grads = [KernelGrad(np.zeros_like(k.weights), 0.0) for k in head.kernels(group)]
        for side in (0, 1):
            d_lambda[gi] += d_score[side] * means[side][group]
            d_mean = d_score[side] * lam[gi] / n_maps
            for kg, (flat, active_mask) in zip(grads, records[side][group]):
                hw = flat.shape[1]
                scale = d_mean / hw
                kg.weights += scale * (flat @ active_mask.astype(np.float64))
                kg.bias += scale * float(active_mask.sum())
        grad_kernels[group] = grads

    # softmax jacobian, restricted to the active simplex
    d_logits = np.zeros(3, dtype=np.float64)
    idx = [i for i, g in enumerate(GROUP_NAMES) if g in active]
    lam_act = lam[idx]
    d_lam_act = d_lambda[idx]
    inner = float(lam_act @ d_lam_act)
    d_logits[idx] = lam_act * (d_lam_act - inner)

    grads = FusionHeadGradients(
        w_trad=grad_kernels["trad"],
        w_percept=grad_kernels["percept"],
        w_semantic=grad_kernels["semantic"],
        lambda_logits=d_logits,
        comparator_scale=gz * delta,
        comparator_bias=gz,
    )
    return loss, grads


def save_head(head: FusionHead, path) -> None:
    """Serialize to .spht; float64 parameters are stored as float32."""
    parts = [MAGIC, struct.pack("<IB", VERSION, _ABLATION_CODES[head.ablation])]
    entries = []
    for gi, group in enumerate(GROUP_NAMES):
        kernels = head.kernels(group)
        if kernels is None:
            continue
        for k in kernels:
            entries.append((gi, k))
    parts.append(struct.pack("<I", len(entries)))
    for gi, k in entries:
        parts.append(struct.pack("<II", gi, k.weights.size))
        parts.append(k.weights.astype("<f4").tobytes())
        parts.append(struct.pack("<f", k.bias))
    logits = head.lambda_logits.copy()
    for i, g in enumerate(GROUP_NAMES):
        if g not in head.active_groups():
            logits[i] = LOGIT_SENTINEL
    parts.append(logits.astype("<f4").tobytes())
    parts.append(struct.pack("<ff", head.comparator_scale, head.comparator_bias))
    Path(path).write_bytes(b"".join(parts))


def load_head(path) -> FusionHead:
    """Parse and validate a .spht file."""
    path = Path(path)
    blob = path.read_bytes()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"truncated .spht file {path.name} at offset {off}")
        chunk = blob[off : off + n]
        off += n
        return chunk

    if take(4) != MAGIC:
        raise FormatError(f"bad magic in {path.name}: not a .spht file")
    version, ablation_code = struct.unpack("<IB", take(5))
    if version != VERSION:
        raise FormatError(f"unsupported .spht version {version} in {path.name}")
    if ablation_code not in _CODE_ABLATIONS:
        raise FormatError(f"unknown ablation code {ablation_code} in {path.name}")
    ablation = _CODE_ABLATIONS[ablation_code]
    (n_kernels,) = struct.unpack("<I", take(4))
    kernels = {0: [], 1: [], 2: []}
    for _ in range(n_kernels):
        gi, in_channels = struct.unpack("<II", take(8))
        if gi not in kernels:
            raise FormatError(f"unknown kernel group id {gi} in {path.name}")
        if in_channels < 1:
            raise FormatError(f"kernel with zero channels in {path.name}")
        w = np.frombuffer(take(4 * in_channels), dtype="<f4").astype(np.float64)
        (bias,) = struct.unpack("<f", take(4))
        kernels[gi].append(Kernel1x1(w, bias))
    logits = np.frombuffer(take(12), dtype="<f4").astype(np.float64)
    a, b = struct.unpack("<ff", take(8))
    if off != len(blob):
        raise FormatError(f"trailing bytes in {path.name}")

    active = ablate(ablation)
    for gi, group in enumerate(GROUP_NAMES):
        if group in active and not kernels[gi]:
            raise FormatError(f"{group} group active but has no kernels in {path.name}")
        if group not in active and kernels[gi]:
            raise FormatError(f"{group} group ablated but has kernels in {path.name}")
    try:
        return FusionHead(
            ablation=ablation,
            w_trad=kernels[0] or None,
            w_percept=kernels[1],
            w_semantic=kernels[2] or None,
            lambda_logits=logits,
            comparator_scale=float(a),
            comparator_bias=float(b),
        )
    except ValueError as exc:
        raise FormatError(f"invalid head in {path.name}: {exc}") from exc
