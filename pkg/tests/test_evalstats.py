import json
import math
from pathlib import Path

import numpy as np
import pytest
import scipy.stats

import spips.evalstats as evalstats
from spips.datasets import Category, JNDSample, TwoAFCSample
from spips.errors import NumericError
from spips.evalstats import (
    CategoryResult,
    CorrelationReport,
    eval_2afc,
    eval_jnd,
    krcc,
    plcc,
    report_to_json,
    srcc,
)
from spips.fusion import init_head

import oracles


def test_plcc_exact_endpoints():
    x = [1.0, 2.0, 3.0, 4.0]
    assert plcc(x, [2 * v + 1 for v in x]) == 1.0
    assert plcc(x, [-v for v in x]) == -1.0
    assert plcc((1, 2, 3), (1, 3, 2)) == 0.5


def test_srcc_rank_behaviour():
    assert srcc([1, 2, 3, 4], [10, 20, 30, 400]) == 1.0  # monotone, not linear
    assert srcc([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    got = srcc([1, 1, 2, 3], [1, 2, 2, 4])
    want = oracles.spearman_bruteforce([1, 1, 2, 3], [1, 2, 2, 4])
    assert got == want


def test_krcc_hand_values():
    assert krcc((1, 2, 3), (1, 3, 2)) == 1.0 / 3.0
    assert krcc([1, 2, 3, 4], [2, 4, 6, 8]) == 1.0
    assert krcc([1, 2, 3, 4], [8, 6, 4, 2]) == -1.0


def test_coefficients_match_bruteforce_bitwise():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 40:
        n = int(rng.integers(3, 31))
        x = rng.integers(0, 10, size=n).tolist()  # integer grids force ties
        y = rng.integers(0, 10, size=n).tolist()
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        assert plcc(x, y) == oracles.pearson_bruteforce(x, y)
        assert srcc(x, y) == oracles.spearman_bruteforce(x, y)
        assert krcc(x, y) == oracles.kendall_bruteforce(x, y)
        checked += 1


def test_plcc_matches_exact_rational_arithmetic():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(3, 20))
        x = rng.normal(size=n).tolist()
        y = rng.normal(size=n).tolist()
        assert abs(plcc(x, y) - oracles.pearson_fraction(x, y)) < 1e-12


def test_coefficients_match_scipy():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n = int(rng.integers(5, 25))
        x = rng.integers(0, 8, size=n).astype(float)
        y = rng.integers(0, 8, size=n).astype(float)
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        assert plcc(x, y) == pytest.approx(scipy.stats.pearsonr(x, y).statistic, abs=1e-12)
        assert srcc(x, y) == pytest.approx(scipy.stats.spearmanr(x, y).statistic, abs=1e-12)
        assert krcc(x, y) == pytest.approx(
            scipy.stats.kendalltau(x, y, variant="b").statistic, abs=1e-12
        )


def test_monotone_transform_invariance():
    rng = np.random.default_rng(3)
    x = rng.normal(size=15).tolist()
    y = rng.normal(size=15).tolist()
    warped = [math.exp(v) for v in x]
    assert srcc(warped, y) == srcc(x, y)
    assert krcc(warped, y) == krcc(x, y)
    scaled = [3.0 * v + 7.0 for v in x]
    assert abs(plcc(scaled, y) - plcc(x, y)) < 1e-9


def test_constant_inputs_raise_numeric_error():
    with pytest.raises(NumericError, match="x is constant"):
        plcc([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(NumericError, match="y is constant"):
        plcc([1.0, 2.0, 3.0], [5.0, 5.0, 5.0])
    with pytest.raises(NumericError):
        srcc([1.0, 1.0], [1.0, 2.0])
    with pytest.raises(NumericError):
        krcc([1.0, 2.0, 3.0], [4.0, 4.0, 4.0])


def test_input_validation():
    with pytest.raises(ValueError, match="length mismatch"):
        plcc([1, 2, 3], [1, 2])
    with pytest.raises(ValueError, match="at least 2"):
        srcc([1], [2])
    with pytest.raises(ValueError, match="non-finite"):
        krcc([1.0, float("nan"), 3.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError, match="non-finite"):
        plcc([1.0, 2.0], [float("inf"), 0.0])


def test_category_result_validation():
    CategoryResult(plcc=0.5, srcc=0.4, krcc=0.3, n=10)
    with pytest.raises(ValueError):
        CategoryResult(plcc=1.5, srcc=0.0, krcc=0.0, n=10)
    with pytest.raises(ValueError):
        CategoryResult(plcc=0.0, srcc=0.0, krcc=0.0, n=1)


def _fake_sample(i, category, judge):
    return TwoAFCSample(
        f"s{i}", category, Path(f"r{i}.png"), Path(f"a{i}.png"), Path(f"b{i}.png"),
        judge, "val",
    )


def _patch_predictions(monkeypatch, to_p_hat):
    """Route the per-sample prediction through a function of the judge."""

    def fake(head, spec, sample, msssim_scales, cache_dir):
        p = to_p_hat(sample.judge)
        return p, p, 1.0 - p  # score1 < score0 exactly when p > 0.5
    monkeypatch.setattr(evalstats, "_predict_probability", fake)


def test_eval_2afc_perfect_predictor(monkeypatch, toy_spec):
    _patch_predictions(monkeypatch, lambda judge: judge)
    judges = [0.1, 0.3, 0.6, 0.9]
    samples = [_fake_sample(i, Category.TRAD, j) for i, j in enumerate(judges)]
    head = init_head(toy_spec, 0, msssim_scales=2)
    report = eval_2afc(head, toy_spec, samples)
    assert list(report.categories) == ["Trad"]
    result = report.categories["Trad"]
    assert result.plcc == 1.0
    assert result.srcc == 1.0
    assert result.krcc == 1.0
    assert result.n == 4
    # m = (0,0,1,1): credits 0.9, 0.7, 0.6, 0.9
    assert result.acc2afc == pytest.approx(0.775)
    assert report.warnings == ()


def test_eval_2afc_inverted_predictor(monkeypatch, toy_spec):
    _patch_predictions(monkeypatch, lambda judge: 1.0 - judge)
    judges = [0.1, 0.3, 0.6, 0.9]
    samples = [_fake_sample(i, Category.CNN, j) for i, j in enumerate(judges)]
    head = init_head(toy_spec, 0, msssim_scales=2)
    report = eval_2afc(head, toy_spec, samples)
    result = report.categories["CNN"]
    assert result.plcc == -1.0
    assert result.srcc == -1.0
    assert result.krcc == -1.0
    assert result.acc2afc == pytest.approx(1.0 - 0.775)


def test_eval_2afc_category_order_and_omission(monkeypatch, toy_spec):
    _patch_predictions(monkeypatch, lambda judge: judge)
    samples = (
        [_fake_sample(i, Category.CNN, j) for i, j in enumerate([0.2, 0.8])]
        + [_fake_sample(10 + i, Category.TRAD, j) for i, j in enumerate([0.1, 0.9])]
        + [_fake_sample(20, Category.DEBLUR, 0.5)]
    )
    head = init_head(toy_spec, 0, msssim_scales=2)
    report = eval_2afc(head, toy_spec, samples)
    # Category enum order, not input order; singleton category is omitted
    assert list(report.categories) == ["Trad", "CNN"]
    assert len(report.warnings) == 1
    assert "Deblur" in report.warnings[0]


def _jnd_images(tmp_path):
    from PIL import Image

    rng = np.random.default_rng(4)
    base = rng.integers(40, 216, size=(32, 32, 3), dtype=np.uint8)
    noisy = np.clip(
        base.astype(int) + rng.integers(-60, 60, size=base.shape), 0, 255
    ).astype(np.uint8)
    paths = {}
    for name, arr in (("clean.png", base), ("noisy.png", noisy)):
        Image.fromarray(arr).save(tmp_path / name, format="PNG")
        paths[name] = tmp_path / name
    return paths


def test_eval_jnd_orders_identical_before_distorted(tmp_path, toy_spec):
    paths = _jnd_images(tmp_path)
    samples = [
        JNDSample("same", Category.TRAD, paths["clean.png"], paths["clean.png"], 0.0),
        JNDSample("diff", Category.TRAD, paths["noisy.png"], paths["clean.png"], 1.0),
    ]
    head = init_head(toy_spec, 0, msssim_scales=2)
    report = eval_jnd(head, toy_spec, samples, msssim_scales=2)
    result = report.categories["Trad"]
    assert result.plcc == 1.0
    assert result.srcc == 1.0
    assert result.krcc == 1.0
    assert result.acc2afc is None


def test_eval_jnd_score_is_symmetric(tmp_path, toy_spec):
    paths = _jnd_images(tmp_path)
    head = init_head(toy_spec, 3, msssim_scales=2)
    fwd = JNDSample("f", Category.TRAD, paths["clean.png"], paths["noisy.png"], 0.5)
    rev = JNDSample("r", Category.TRAD, paths["noisy.png"], paths["clean.png"], 0.5)
    assert evalstats._jnd_score(head, toy_spec, fwd, 2) == evalstats._jnd_score(
        head, toy_spec, rev, 2
    )


def test_eval_jnd_constant_scores_raise(tmp_path, toy_spec):
    paths = _jnd_images(tmp_path)
    samples = [
        JNDSample("a", Category.TRAD, paths["clean.png"], paths["clean.png"], 0.0),
        JNDSample("b", Category.TRAD, paths["clean.png"], paths["clean.png"], 1.0),
    ]
    head = init_head(toy_spec, 0, msssim_scales=2)
    with pytest.raises(NumericError, match="constant"):
        eval_jnd(head, toy_spec, samples, msssim_scales=2)


def test_report_to_json_schema():
    report = CorrelationReport(
        categories={
            "Trad": CategoryResult(plcc=0.9, srcc=0.8, krcc=0.7, n=5, acc2afc=0.85),
            "CNN": CategoryResult(plcc=0.6, srcc=0.5, krcc=0.4, n=3),
        },
        warnings=("category Synth: 1 sample(s), need >= 2; omitted",),
    )
    text = report_to_json(report)
    payload = json.loads(text)
    assert list(payload) == ["Trad", "CNN"]
    assert payload["Trad"] == {"plcc": 0.9, "srcc": 0.8, "krcc": 0.7, "n": 5,
                               "acc2afc": 0.85}
    assert "acc2afc" not in payload["CNN"]
    assert text.startswith("{\n  ")  # indent=2 for humans reading the file
