import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hcm.metrics import (MetricsReport, UndefinedCorrelation, auroc, coverage_at_k, ece_reg, evaluate,
                         fpr_at_95tpr, pearson, per_sample_rmse, rmse_report, spearman)

pos = st.floats(0, 100, allow_nan=False)


# --- independent reference implementations ------------------------------------------


def ref_coverage(u, r, k):
    hits = 0
    for ui, ri in zip(u, r):
        if ri <= k * ui:
            hits += 1
    return hits / len(u)


def ref_ece(u, r, B):
    lo, hi = min(u), max(u)
    width = (hi - lo) / B
    bins = [[] for _ in range(B)]
    for ui, ri in zip(u, r):
        b = B - 1 if width == 0 else min(int((ui - lo) / width), B - 1)
        bins[b].append((ui, ri))
    total = 0.0
    for content in bins:
        if content:
            mu = sum(c[0] for c in content) / len(content)
            mr = sum(c[1] for c in content) / len(content)
            total += len(content) * abs(mu - mr)
    return total / len(u)


def ref_ranks(x):
    """Average ranks by explicit tie groups."""
    order = sorted(range(len(x)), key=lambda i: x[i])
    ranks = [0.0] * len(x)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and x[order[j + 1]] == x[order[i]]:
            j += 1
        for m in range(i, j + 1):
            ranks[order[m]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def ref_pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / (va * vb) ** 0.5


def ref_auroc(s, y):
    pos_s = [a for a, l in zip(s, y) if l]
    neg_s = [a for a, l in zip(s, y) if not l]
    wins = 0.0
    for p, q in itertools.product(pos_s, neg_s):
        wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos_s) * len(neg_s))


def ref_fpr(s, y, tpr=0.95):
    """Sweep every candidate threshold from the top; flag score >= threshold."""
    s, y = np.asarray(s), np.asarray(y).astype(bool)
    for thr in sorted(set(s.tolist()), reverse=True):
        flagged = s >= thr
        if flagged[y].mean() >= tpr:
            return flagged[~y].mean()
    return 1.0


# --- tests ------------------------------------------------------------------------------


def test_coverage_examples():
    assert coverage_at_k([1.0, 2.0], [0.0, 0.0], 1) == 1.0
    u = np.array([0.5, 1.0, 3.0])
    assert coverage_at_k(u, 2 * u, 1) == 0.0
    assert coverage_at_k(u, 2 * u, 2) == 1.0
    with pytest.raises(ValueError):
        coverage_at_k([], [], 1)


def test_coverage_matches_loop(rng):
    u, r = rng.exponential(size=500), rng.exponential(size=500)
    for k in (1, 2, 3):
        assert coverage_at_k(u, r, k) == pytest.approx(ref_coverage(u, r, k), abs=1e-10)


def test_ece_examples():
    u = np.array([0.1, 0.5, 2.0, 3.0])
    assert ece_reg(u, u) == 0
    assert ece_reg([1.0, 1.0], [0.0, 2.0], 1) == 0


def test_ece_matches_reference(rng):
    for _ in range(20):
        u, r = rng.exponential(size=300), rng.exponential(size=300)
        assert ece_reg(u, r, 10) == pytest.approx(ref_ece(u, r, 10), abs=1e-10)


def test_correlation_examples():
    r = np.array([0.5, 1.0, 4.0, 2.0])
    assert pearson(r, r) == pytest.approx(1.0)
    assert spearman(r, r) == pytest.approx(1.0)
    assert pearson(5.0 - r, r) == pytest.approx(-1.0)
    with pytest.raises(UndefinedCorrelation, match="undefined"):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(UndefinedCorrelation):
        spearman([1.0], [2.0])


def test_spearman_with_ties_matches_reference(rng):
    u = rng.integers(0, 6, 200).astype(float)
    r = rng.integers(0, 4, 200).astype(float)
    assert spearman(u, r) == pytest.approx(ref_pearson(ref_ranks(list(u)), ref_ranks(list(r))), abs=1e-10)


def test_rmse_examples(rng):
    assert rmse_report([5.0, 5.0]) == 5.0
    assert rmse_report([0.0, 10.0]) == 5.0
    r = rng.exponential(size=100)
    assert rmse_report(r) == pytest.approx(sum(r) / len(r), abs=1e-12)
    np.testing.assert_allclose(per_sample_rmse([[1.0, 1.0], [0.0, 0.0]], [[0.0, 0.0], [3.0, 4.0]]),
                               [1.0, np.sqrt(12.5)])


def test_auroc_examples():
    labels = np.r_[np.zeros(5), np.ones(5)]
    assert auroc(np.r_[np.arange(5), np.arange(5) + 10], labels) == 1.0
    assert auroc(np.ones(10), labels) == 0.5
    with pytest.raises(ValueError):
        auroc([1.0, 2.0], [1, 1])


def test_auroc_matches_pairwise(rng):
    for _ in range(30):
        s = rng.integers(0, 15, 50).astype(float)  # plenty of ties
        y = rng.integers(0, 2, 50)
        if y.all() or not y.any():
            continue
        assert auroc(s, y) == ref_auroc(s, y)


def test_fpr_examples(rng):
    labels = np.r_[np.zeros(5), np.ones(5)]
    assert fpr_at_95tpr(np.r_[np.arange(5), np.arange(5) + 10], labels) == 0.0
    s = rng.standard_normal(20_000)
    y = rng.integers(0, 2, 20_000)
    assert abs(fpr_at_95tpr(s, y) - 0.95) <= 0.02


def test_fpr_matches_threshold_sweep(rng):
    for _ in range(50):
        n = int(rng.integers(4, 30))
        s = rng.integers(0, 8, n).astype(float)
        y = rng.integers(0, 2, n)
        if y.all() or not y.any():
            continue
        assert fpr_at_95tpr(s, y) == ref_fpr(s, y)


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_permutation_invariance(data):
    n = data.draw(st.integers(4, 40))
    u = data.draw(arrays(np.float64, n, elements=pos))
    r = data.draw(arrays(np.float64, n, elements=pos))
    y = np.arange(n) % 2
    perm = np.random.default_rng(data.draw(st.integers(0, 1000))).permutation(n)
    for fn in (lambda a, b: coverage_at_k(a, b, 1), ece_reg, rmse_report_pair):
        assert fn(u[perm], r[perm]) == pytest.approx(fn(u, r), rel=1e-9, abs=1e-12)
    assert auroc(u[perm], y[perm]) == pytest.approx(auroc(u, y), abs=1e-12)
    assert fpr_at_95tpr(u[perm], y[perm]) == fpr_at_95tpr(u, y)


def rmse_report_pair(u, r):
    return rmse_report(r)


@settings(max_examples=100, deadline=None)
@given(k=arrays(np.int64, 30, elements=st.integers(-500, 500), unique=True))
def test_rank_metrics_invariant_to_monotone_transform(k):
    s = k / 100.0
    y = np.arange(30) % 2
    t = np.exp(s) * 3 + 1
    assert auroc(t, y) == pytest.approx(auroc(s, y))
    assert auroc(s, y) + auroc(-s, y) == pytest.approx(1.0)
    r = np.linspace(0, 1, 30) ** 2
    assert spearman(t, r) == pytest.approx(spearman(s, r))


@settings(max_examples=100, deadline=None)
@given(u=arrays(np.float64, 25, elements=pos), r=arrays(np.float64, 25, elements=pos))
def test_coverage_nondecreasing_in_k(u, r):
    c = [coverage_at_k(u, r, k) for k in (1, 2, 3)]
    assert c[0] <= c[1] <= c[2]


@settings(max_examples=100, deadline=None)
@given(u=arrays(np.float64, st.integers(1, 40), elements=pos), B=st.integers(1, 20))
def test_ece_zero_when_matched(u, B):
    assert ece_reg(u, u, B) == pytest.approx(0.0, abs=1e-9)


def test_report_serialization():
    rng = np.random.default_rng(1)
    u, r = rng.exponential(size=50), rng.exponential(size=50)
    rep = evaluate(u, r, ood_scores=np.r_[u, u + 100], ood_labels=np.r_[np.zeros(50), np.ones(50)])
    doc = json.loads(rep.to_json())
    assert list(doc) == MetricsReport.columns()
    assert doc["auroc"] == 1.0
    assert MetricsReport.csv_header().split(",") == MetricsReport.columns()
    assert len(rep.csv_row().split(",")) == len(MetricsReport.columns())
    plain = evaluate(u, r)
    assert plain.auroc is None and plain.csv_row().endswith(",,")


def test_report_undefined_correlation_is_null():
    rep = evaluate(np.ones(10), np.linspace(0, 1, 10))
    assert rep.to_dict()["pearson"] is None
    json.loads(rep.to_json())
