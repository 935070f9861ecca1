"""Correlation statistics and per-category 2AFC/JND evaluation reports.

The three coefficients are implemented definitionally in pure Python with
exactly-rounded accumulation (math.fsum), so results on small integer inputs
are bit-for-bit reproducible against brute-force oracles: PLCC is the
centered product-moment formula, SRCC is PLCC over average ranks, KRCC is
tau-b by O(n^2) pair enumeration.  Sample counts here are desk scale; nothing
needs vectorizing.

A constant input makes every coefficient undefined (zero variance in the
denominator), which raises NumericError rather than returning NaN.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .datasets import Category
from .errors import NumericError
from .fusion import FusionHead, compare_2afc, score
from .trainer import _soft_accuracy, compute_groups, precompute_groups
from .traditional import max_msssim_scales

__all__ = [
    "CategoryResult",
    "CorrelationReport",
    "plcc",
    "srcc",
    "krcc",
    "eval_2afc",
    "eval_jnd",
    "report_to_json",
]


def _as_floats(name: str, values) -> list:
    out = [float(v) for v in values]
    if len(out) < 2:
        raise ValueError(f"{name} needs at least 2 values, got {len(out)}")
    for v in out:
        if not math.isfinite(v):
            raise ValueError(f"{name} contains a non-finite value")
    return out


def _check_lengths(x, y) -> None:
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")


def plcc(x, y) -> float:
    """Pearson product-moment correlation, exactly-rounded accumulation."""
    xs = _as_floats("x", x)
    ys = _as_floats("y", y)
    _check_lengths(xs, ys)
    n = len(xs)
    mean_x = math.fsum(xs) / n
    mean_y = math.fsum(ys) / n
    dx = [v - mean_x for v in xs]
    dy = [v - mean_y for v in ys]
    sxx = math.fsum(a * a for a in dx)
    syy = math.fsum(b * b for b in dy)
    if sxx == 0.0 or syy == 0.0:
        which = "x" if sxx == 0.0 else "y"
        raise NumericError(f"{which} is constant; correlation undefined")
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    # single sqrt over the product: perfectly correlated inputs then land on
    # exactly +-1.0 (sqrt(fl(s*s)) == s in round-to-nearest), separated sqrts
    # would not
    return sxy / math.sqrt(sxx * syy)


def _average_ranks(values) -> list:
    """Fractional ranks (1-based); tied values share their rank mean."""
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j + 2) / 2.0  # mean of 1-based positions i+1 .. j+1
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def srcc(x, y) -> float:
    """Spearman rank correlation: Pearson over average ranks."""
    xs = _as_floats("x", x)
    ys = _as_floats("y", y)
    _check_lengths(xs, ys)
    return plcc(_average_ranks(xs), _average_ranks(ys))


def krcc(x, y) -> float:
    """Kendall tau-b by direct pair enumeration."""
    xs = _as_floats("x", x)
    ys = _as_floats("y", y)
    _check_lengths(xs, ys)
    n = len(xs)
    concordant = 0
    discordant = 0
    ties_x = 0
    ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = xs[i] - xs[j]
            dy = ys[i] - ys[j]
            if dx == 0.0:
                ties_x += 1
            if dy == 0.0:
                ties_y += 1
            if dx == 0.0 or dy == 0.0:
                continue
            if (dx > 0.0) == (dy > 0.0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    if n0 == ties_x or n0 == ties_y:
        which = "x" if n0 == ties_x else "y"
        raise NumericError(f"{which} is constant; correlation undefined")
    return (concordant - discordant) / math.sqrt((n0 - ties_x) * (n0 - ties_y))


@dataclass(frozen=True)
class CategoryResult:
    plcc: float
    srcc: float
    krcc: float
    n: int
    acc2afc: float | None = None  # 2AFC evaluations only

    def __post_init__(self):
        for name in ("plcc", "srcc", "krcc"):
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                raise ValueError(f"{name} out of [-1, 1]: {v}")
        if self.n < 2:
            raise ValueError(f"reported categories need n >= 2, got {self.n}")


@dataclass(frozen=True)
class CorrelationReport:
    categories: dict  # category value -> CategoryResult, in Category enum order
    warnings: tuple  # human-readable records for omitted categories


def _predict_probability(head: FusionHead, spec, sample, msssim_scales, cache_dir):
    """(p_hat, score0, score1) for one 2AFC sample."""
    groups0, groups1 = precompute_groups(
        spec, sample, msssim_scales=msssim_scales, cache_dir=cache_dir
    )
    s0 = score(head, groups0)
    s1 = score(head, groups1)
    return compare_2afc(head, s0, s1), s0.score, s1.score


def _jnd_score(head: FusionHead, spec, sample, msssim_scales) -> float:
    """Score of img0 against img1-as-reference."""
    img0, img1 = sample.load_images()
    if msssim_scales is None:
        msssim_scales = min(5, max_msssim_scales(img0.shape[1], img0.shape[2]))
    return score(head, compute_groups(spec, img0, img1, msssim_scales)).score


def _by_category(samples):
    buckets = {}
    for sample in samples:
        buckets.setdefault(sample.category, []).append(sample)
    # deterministic category order
    return {c: buckets[c] for c in Category if c in buckets}


def eval_2afc(head: FusionHead, spec, samples, *, cache_dir=None) -> CorrelationReport:
    """Per-category correlations of predicted preference vs human judge.

    x is the comparator probability p_hat, y the human fraction preferring
    image1; acc2afc is the soft 2AFC accuracy.  Categories with fewer than
    2 samples are omitted with a warning record.
    """
    scales = head.msssim_scales()
    results = {}
    warnings = []
    for category, members in _by_category(samples).items():
        if len(members) < 2:
            warnings.append(
                f"category {category.value}: {len(members)} sample(s), need >= 2; omitted"
            )
            continue
        triples = [
            _predict_probability(head, spec, s, scales, cache_dir) for s in members
        ]
        p_hat = [t[0] for t in triples]
        judges = [s.judge for s in members]
        acc = _soft_accuracy([t[1] for t in triples], [t[2] for t in triples], judges)
        results[category.value] = CategoryResult(
            plcc=plcc(p_hat, judges),
            srcc=srcc(p_hat, judges),
            krcc=krcc(p_hat, judges),
            n=len(members),
            acc2afc=acc,
        )
    return CorrelationReport(categories=results, warnings=tuple(warnings))


def eval_jnd(head: FusionHead, spec, samples, *, msssim_scales=None) -> CorrelationReport:
    """Per-category correlations of score vs human difference fraction."""
    scales = head.msssim_scales() if msssim_scales is None else msssim_scales
    results = {}
    warnings = []
    for category, members in _by_category(samples).items():
        if len(members) < 2:
            warnings.append(
                f"category {category.value}: {len(members)} sample(s), need >= 2; omitted"
            )
            continue
        scores = [_jnd_score(head, spec, s, scales) for s in members]
        diffs = [s.diff_fraction for s in members]
        results[category.value] = CategoryResult(
            plcc=plcc(scores, diffs),
            srcc=srcc(scores, diffs),
            krcc=krcc(scores, diffs),
            n=len(members),
        )
    return CorrelationReport(categories=results, warnings=tuple(warnings))


def report_to_json(report: CorrelationReport) -> str:
    """JSON object keyed by category; acc2afc appears only where defined."""
    payload = {}
    for category, r in report.categories.items():
        entry = {"plcc": r.plcc, "srcc": r.srcc, "krcc": r.krcc, "n": r.n}
        if r.acc2afc is not None:
            entry["acc2afc"] = r.acc2afc
        payload[category] = entry
    return json.dumps(payload, indent=2)
