"""Metric implementations against independent brute-force oracles."""

from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srd import metrics
from srd.metrics import (
    MetricsReport,
    auc_score,
    compose_quality,
    cosine_similarity,
    delta_analysis,
    detection_metrics,
    histogram_pdf,
    max_toxicity,
    ols_fit,
    perplexity,
    sta,
    top_k_mean,
    toxic_ratio,
)

RNG_CASES = 1000


# -------------------- brute-force oracles (plain python, no numpy) --------------------


def bf_toxic_ratio(scores, threshold=0.5):
    return sum(1 for s in scores if s > threshold) / len(scores)


def bf_max(scores):
    best = scores[0]
    for s in scores[1:]:
        if s > best:
            best = s
    return best


def bf_top_k_mean(scores, k):
    ordered = sorted(scores, reverse=True)[: min(k, len(scores))]
    return sum(ordered) / len(ordered)


def bf_sta(toxic_flags):
    return sum(1 for t in toxic_flags if not t) / len(toxic_flags)


def bf_detection(scores, labels, threshold=0.5):
    tp = fp = tn = fn = 0
    for s, l in zip(scores, labels):
        predicted = s > threshold
        if l == 1 and predicted:
            tp += 1
        elif l == 1:
            fn += 1
        elif predicted:
            fp += 1
        else:
            tn += 1
    fpr = fp / (fp + tn) if (fp + tn) else None
    fnr = fn / (fn + tp) if (fn + tp) else None
    positives = [s for s, l in zip(scores, labels) if l == 1]
    negatives = [s for s, l in zip(scores, labels) if l == 0]
    auc = None
    if positives and negatives:
        wins = 0.0
        for p in positives:
            for n in negatives:
                if p > n:
                    wins += 1.0
                elif p == n:
                    wins += 0.5
        auc = wins / (len(positives) * len(negatives))
    return fpr, fnr, auc


def bf_histogram(scores, bins):
    edges = [i / bins for i in range(bins + 1)]
    counts = [0] * bins
    for s in scores:
        for b in range(bins):
            last = b == bins - 1
            if edges[b] <= s < edges[b + 1] or (last and s == edges[bins]):
                counts[b] += 1
                break
    width = 1.0 / bins
    return [c / (len(scores) * width) for c in counts]


def bf_ols(xs, ys):
    n = len(xs)
    sx = sum(xs)
    sy = sum(ys)
    sxy = sum(x * y for x, y in zip(xs, ys))
    sxx = sum(x * x for x in xs)
    slope = (n * sxy - sx * sy) / (n * sxx - sx * sx)
    return slope, (sy - slope * sx) / n


# -------------------- toxic_ratio --------------------


def test_toxic_ratio_examples():
    assert toxic_ratio([0.6, 0.4, 0.7, 0.2]) == 0.5
    assert toxic_ratio([1.0, 1.0]) == 1.0


def test_toxic_ratio_boundary_is_strictly_above():
    assert toxic_ratio([0.5, 0.5, 0.5]) == 0.0


def test_toxic_ratio_empty_rejected():
    with pytest.raises(ValueError):
        toxic_ratio([])


def test_max_toxicity_examples():
    assert max_toxicity([0.3, 0.9, 0.1]) == 0.9
    assert max_toxicity([0.42]) == 0.42
    with pytest.raises(ValueError):
        max_toxicity([])


def test_top_k_mean_examples():
    assert top_k_mean([0.9, 0.8, 0.7, 0.1], k=2) == pytest.approx(0.85)
    assert top_k_mean([0.2, 0.3, 0.4], k=50) == pytest.approx(0.3)  # n < k: mean of all
    assert top_k_mean([0.4, 0.4, 0.4], k=2) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        top_k_mean([], k=5)


# -------------------- randomized oracle equivalence --------------------


def test_aggregates_match_brute_force():
    rng = random.Random(1234)
    for _ in range(RNG_CASES):
        n = rng.randrange(1, 40)
        scores = [rng.random() for _ in range(n)]
        threshold = rng.choice([0.0, 0.25, 0.5, 0.75])
        k = rng.randrange(1, 60)
        assert toxic_ratio(scores, threshold) == pytest.approx(bf_toxic_ratio(scores, threshold))
        assert max_toxicity(scores) == pytest.approx(bf_max(scores))
        assert top_k_mean(scores, k) == pytest.approx(bf_top_k_mean(scores, k))
        flags = [rng.random() < 0.5 for _ in range(n)]
        assert sta(flags) == pytest.approx(bf_sta(flags))


def test_detection_matches_brute_force_with_ties():
    rng = random.Random(99)
    checked_auc = 0
    for _ in range(RNG_CASES):
        n = rng.randrange(2, 30)
        # coarse grid forces plenty of ties
        scores = [rng.randrange(0, 5) / 4 for _ in range(n)]
        labels = [rng.randrange(2) for _ in range(n)]
        result = detection_metrics(scores, labels)
        fpr, fnr, auc = bf_detection(scores, labels)
        assert result.fpr == (pytest.approx(fpr) if fpr is not None else None)
        assert result.fnr == (pytest.approx(fnr) if fnr is not None else None)
        if auc is None:
            assert result.auc is None
        else:
            assert result.auc == pytest.approx(auc)
            checked_auc += 1
    assert checked_auc > RNG_CASES // 2


def test_detection_spec_examples():
    perfect = detection_metrics([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert (perfect.fpr, perfect.fnr, perfect.auc) == (0.0, 0.0, 1.0)

    tied = detection_metrics([0.7, 0.7, 0.7, 0.7], [1, 0, 1, 0])
    assert tied.auc == 0.5

    mixed = detection_metrics([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0])
    assert mixed.auc == pytest.approx(0.75)


def test_auc_single_class_raises_but_rates_survive():
    with pytest.raises(ValueError):
        auc_score([0.1, 0.9], [1, 1])
    result = detection_metrics([0.1, 0.9], [1, 1])
    assert result.auc is None
    assert result.fnr == 0.5
    assert result.fpr is None


def test_auc_invariant_under_monotone_transforms():
    rng = random.Random(31337)
    for _ in range(300):
        n = rng.randrange(4, 25)
        scores = [rng.randrange(0, 9) / 8 for _ in range(n)]
        labels = [rng.randrange(2) for _ in range(n)]
        if len(set(labels)) < 2:
            continue
        base = auc_score(scores, labels)
        for transform in (lambda x: 2 * x + 1, math.exp, lambda x: x ** 3):
            assert auc_score([transform(s) for s in scores], labels) == base


# -------------------- perplexity --------------------


def test_perplexity_uniform_probabilities():
    assert perplexity([0.0, 0.0, 0.0]) == 1.0
    assert perplexity([math.log(0.5)] * 4) == 2.0


def test_perplexity_closed_form_example():
    assert perplexity([math.log(0.1), math.log(0.4)]) == pytest.approx(5.0)


def test_perplexity_rejects_bad_input():
    with pytest.raises(ValueError):
        perplexity([])
    with pytest.raises(ValueError):
        perplexity([0.1])


def test_perplexity_concatenation_is_geometric_mean():
    rng = random.Random(8)
    for _ in range(200):
        n = rng.randrange(1, 20)
        a = [math.log(rng.uniform(0.05, 1.0)) for _ in range(n)]
        b = [math.log(rng.uniform(0.05, 1.0)) for _ in range(n)]
        combined = perplexity(a + b)
        assert combined == pytest.approx(math.sqrt(perplexity(a) * perplexity(b)), abs=1e-9)


# -------------------- quality composition --------------------


def test_compose_quality_reference_rows():
    assert compose_quality(0.7851, 1.0000, 0.9850, "product") == pytest.approx(0.7733, abs=5e-4)
    assert compose_quality(0.9329, 0.9691, 0.7709, "product") == pytest.approx(0.6969, abs=5e-4)
    assert compose_quality(0.512, 1, 1, "geomean") == pytest.approx(0.8, abs=1e-12)


def test_compose_quality_validates_inputs():
    with pytest.raises(ValueError):
        compose_quality(1.2, 0.5, 0.5)
    with pytest.raises(ValueError):
        compose_quality(0.5, 0.5, 0.5, mode="mean")


@given(
    st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
    st.floats(0, 1), st.sampled_from(["product", "geomean"]),
)
@settings(max_examples=300)
def test_compose_quality_monotone(sim, sta_v, fl, bump, mode):
    base = compose_quality(sim, sta_v, fl, mode)
    bumped_sim = min(1.0, sim + bump)
    assert compose_quality(bumped_sim, sta_v, fl, mode) >= base - 1e-12


@given(st.floats(0.01, 1))
def test_compose_quality_geomean_idempotent(x):
    assert compose_quality(x, x, x, "geomean") == pytest.approx(x, rel=1e-12)


def test_sta_examples():
    assert sta(["benign", "benign", "toxic"]) == pytest.approx(2 / 3)
    assert sta(["benign"] * 5) == 1.0
    with pytest.raises(ValueError):
        sta([])


def test_sta_accepts_verdict_enum():
    from srd.backend import Verdict

    assert sta([Verdict.BENIGN, Verdict.TOXIC]) == 0.5


# -------------------- cosine similarity --------------------


def test_cosine_similarity_cases():
    assert cosine_similarity([1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.0)
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)
    assert cosine_similarity([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cosine_similarity([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        cosine_similarity([1.0], [1.0, 2.0])


# -------------------- histogram --------------------


def test_histogram_point_mass():
    pdf = histogram_pdf([0.01, 0.02, 0.05], bin_count=10)
    assert pdf.densities[0] == pytest.approx(10.0)
    assert all(d == 0 for d in pdf.densities[1:])


def test_histogram_uniform_grid():
    scores = [i / 100 + 0.005 for i in range(100)]
    pdf = histogram_pdf(scores, bin_count=10)
    assert pdf.densities == pytest.approx([1.0] * 10)


def test_histogram_mass_above_is_strict():
    pdf = histogram_pdf([0.4, 0.6], bin_count=10)
    assert pdf.mass_above(0.5) == 0.5
    assert histogram_pdf([0.5, 0.5], bin_count=10).mass_above(0.5) == 0.0


def test_histogram_matches_brute_force_and_integrates_to_one():
    rng = random.Random(777)
    for _ in range(RNG_CASES):
        n = rng.randrange(1, 50)
        scores = [rng.random() for _ in range(n)]
        bins = rng.randrange(1, 25)
        pdf = histogram_pdf(scores, bins)
        assert pdf.densities == pytest.approx(bf_histogram(scores, bins))
        integral = sum(d * (1.0 / bins) for d in pdf.densities)
        assert integral == pytest.approx(1.0, abs=1e-9)


# -------------------- ols / delta --------------------


def test_ols_exact_lines():
    fit = ols_fit([0.0, 1.0, 2.0, 3.0], [0.0, 2.0, 4.0, 6.0])
    assert (fit.slope, fit.intercept) == (pytest.approx(2.0), pytest.approx(0.0))
    flat = ols_fit([0.0, 1.0, 2.0], [3.0, 3.0, 3.0])
    assert (flat.slope, flat.intercept) == (pytest.approx(0.0), pytest.approx(3.0))


def test_ols_degenerate_xs_rejected():
    with pytest.raises(ValueError):
        ols_fit([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


def test_ols_matches_normal_equations_on_random_clouds():
    rng = random.Random(2718)
    for _ in range(RNG_CASES):
        n = rng.randrange(2, 30)
        xs = [rng.uniform(-5, 5) for _ in range(n)]
        if max(xs) - min(xs) < 1e-9:
            continue
        ys = [rng.uniform(-5, 5) for _ in range(n)]
        fit = ols_fit(xs, ys)
        slope, intercept = bf_ols(xs, ys)
        assert fit.slope == pytest.approx(slope, abs=1e-9)
        assert fit.intercept == pytest.approx(intercept, abs=1e-9)


def test_delta_analysis_perfect_detox_identity():
    p = [0.1, 0.5, 0.9, 0.3]
    o = [0.2, 0.6, 0.8, 0.4]
    r = [0.0, 0.0, 0.0, 0.0]
    result = delta_analysis(p, o, r)
    assert result.prompt_vs_rewrite.slope == pytest.approx(1.0)
    assert result.prompt_vs_rewrite.intercept == pytest.approx(0.0)
    assert result.original_vs_rewrite.slope == pytest.approx(1.0)


def test_delta_analysis_rewrite_equals_original():
    p = [0.1, 0.5, 0.9]
    o = [0.2, 0.6, 0.8]
    result = delta_analysis(p, o, list(o))
    assert result.original_vs_rewrite.slope == pytest.approx(0.0)


def test_delta_analysis_recovers_planted_slope():
    rng = random.Random(11)
    p = [rng.random() for _ in range(40)]
    o = [rng.random() for _ in range(40)]
    slope, intercept = 0.81, 0.05
    r_from_p = [x - (slope * x + intercept) for x in p]
    result = delta_analysis(p, o, r_from_p)
    assert result.prompt_vs_rewrite.slope == pytest.approx(slope, abs=1e-6)
    assert result.prompt_vs_rewrite.intercept == pytest.approx(intercept, abs=1e-6)


def test_delta_analysis_length_mismatch():
    with pytest.raises(ValueError):
        delta_analysis([0.1], [0.2, 0.3], [0.0, 0.0])


# -------------------- report assembly --------------------


def test_report_invariants_and_shape():
    report = metrics.build_report([0.2, 0.6, 0.9], top_k=2)
    assert report.t5mtv <= report.mtv
    doc = report.to_dict()
    assert list(doc) == ["toxic_ratio", "mtv", "t5mtv", "sample_count"]
    with pytest.raises(ValueError):
        MetricsReport(toxic_ratio=0.1, mtv=0.5, t5mtv=0.7, sample_count=3)
    with pytest.raises(ValueError):
        MetricsReport(toxic_ratio=0.1, mtv=0.5, t5mtv=0.4, sample_count=3, ppl=0.5)


def test_report_with_detection_and_quality():
    report = metrics.build_report(
        [0.9, 0.1],
        labels=[1, 0],
        token_logprobs=[math.log(0.5)] * 3,
        ppl_scorer="mock",
        quality=metrics.quality_summary(0.7851, 1.0, 0.9850),
    )
    doc = report.to_dict()
    assert doc["detection"]["auc"] == 1.0
    assert doc["ppl"] == 2.0
    assert doc["quality"]["j_product"] == pytest.approx(0.7733, abs=5e-4)


def test_quality_from_samples_aggregate_vs_per_sample():
    sims = [0.8, 0.6]
    verdicts = ["benign", "toxic"]
    fls = [1.0, 0.5]
    agg = metrics.quality_from_samples(sims, verdicts, fls, "aggregate")
    # aggregate: mean sim 0.7, sta 0.5, mean fl 0.75
    assert agg["j_product"] == pytest.approx(0.7 * 0.5 * 0.75)
    per = metrics.quality_from_samples(sims, verdicts, fls, "per_sample")
    # per-sample: (0.8*1*1.0 + 0.6*0*0.5) / 2
    assert per["j_product"] == pytest.approx(0.4)
    with pytest.raises(ValueError):
        metrics.quality_from_samples(sims, verdicts, [1.0], "aggregate")
    with pytest.raises(ValueError):
        metrics.quality_from_samples(sims, verdicts, fls, "median")


def test_threshold_zero_dominates_any_positive_threshold():
    rng = random.Random(4)
    for _ in range(200):
        scores = [rng.random() for _ in range(rng.randrange(1, 20))]
        t = rng.uniform(1e-6, 1.0)
        assert toxic_ratio(scores, 0.0) >= toxic_ratio(scores, t)
