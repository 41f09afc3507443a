import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reconmil.metrics import (MetricError, MetricsReport, aggregate, binary_auc, c_index, classification_report,
                              survival_report)


def brute_auc(scores, positive):
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return total / (len(pos) * len(neg))


def brute_c(risks, times, observed):
    num = den = 0.0
    for i, j in itertools.permutations(range(len(risks)), 2):
        if times[i] < times[j] and observed[i]:
            den += 1
            num += 1.0 if risks[i] > risks[j] else 0.5 if risks[i] == risks[j] else 0.0
    return num / den


def two_col(s):
    s = np.asarray(s, dtype=float)
    return np.stack([np.zeros_like(s), s], axis=1)


def test_auc_worked_example():
    assert binary_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    rep = classification_report(two_col([0.1, 0.4, 0.35, 0.8]), [0, 0, 1, 1])
    assert rep.values["auc"] == 0.75


def test_perfect_separation():
    rep = classification_report(two_col([-2.0, -1.0, 1.0, 3.0]), [0, 0, 1, 1])
    assert rep.values == {"auc": 1.0, "acc": 1.0, "f1": 1.0}


def test_all_tied_scores_give_half():
    assert classification_report(np.zeros((6, 2)), [0, 1, 0, 1, 0, 1]).values["auc"] == 0.5


def test_argmax_ties_go_to_lowest_class():
    rep = classification_report(np.zeros((4, 2)), [0, 0, 0, 1])
    assert rep.values["acc"] == 0.75


def test_single_class_is_an_error():
    with pytest.raises(MetricError, match="single-class"):
        classification_report(two_col([0.1, 0.2, 0.3]), [1, 1, 1])
    with pytest.raises(MetricError):
        binary_auc([0.1, 0.2], [0, 0])


def test_shape_errors():
    with pytest.raises(MetricError):
        classification_report(np.zeros((3, 2)), [0, 1])
    with pytest.raises(MetricError):
        classification_report(np.zeros((1, 2)), [0])


def test_macro_f1_skips_absent_classes():
    scores = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 1, 0, 0]], dtype=float)
    rep = classification_report(scores, [0, 1, 0])
    # predictions [0, 1, 1]: class 0 has tp=1 fn=1, class 1 has tp=1 fp=1, classes 2-3 never occur
    f0 = 2 * 1 / (2 * 1 + 0 + 1)
    f1 = 2 * 1 / (2 * 1 + 1 + 0)
    assert rep.values["f1"] == pytest.approx((f0 + f1) / 2)
    assert any("class 2" in n for n in rep.notes) and any("class 3" in n for n in rep.notes)


def test_multiclass_auc_is_macro_one_vs_rest():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(30, 3))
    labels = np.arange(30) % 3
    expect = np.mean([brute_auc(scores[:, c], labels == c) for c in range(3)])
    assert classification_report(scores, labels).values["auc"] == pytest.approx(expect, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=25))
def test_auc_matches_pair_enumeration(pairs):
    s = [float(a) for a, _ in pairs]
    p = [b for _, b in pairs]
    if all(p) or not any(p):
        return
    assert binary_auc(s, p) == pytest.approx(brute_auc(s, p), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_auc_invariant_under_increasing_maps(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=20)
    y = np.arange(20) % 2
    base = binary_auc(s, y)
    assert binary_auc(np.exp(s), y) == base
    assert binary_auc(3.0 * s + 7.0, y) == base


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_report_invariant_under_shuffle(seed):
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=(15, 3))
    labels = rng.integers(0, 3, 15)
    labels[:3] = [0, 1, 2]
    perm = rng.permutation(15)
    a = classification_report(scores, labels).values
    b = classification_report(scores[perm], labels[perm]).values
    assert a == pytest.approx(b, abs=1e-12)


# -------------------------------------------------------------- C-index


def test_c_index_examples():
    t = [1.0, 2.0, 3.0, 4.0]
    assert c_index([4, 3, 2, 1], t, [True] * 4) == 1.0
    assert c_index([1, 2, 3, 4], t, [True] * 4) == 0.0
    assert c_index([3, 1, 2], [1, 2, 3], [1, 0, 1]) == 1.0


def test_c_index_ties():
    assert c_index([1.0, 1.0], [1.0, 2.0], [True, True]) == 0.5
    # tied times are not comparable
    assert c_index([2.0, 1.0, 0.0], [1.0, 1.0, 5.0], [True, True, True]) == 1.0


def test_c_index_no_comparable_pairs():
    with pytest.raises(MetricError):
        c_index([1, 2, 3], [1, 2, 3], [False] * 3)
    with pytest.raises(MetricError):
        c_index([1, 2], [2.0, 2.0], [True, True])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(-3, 3), st.integers(1, 6), st.booleans()), min_size=2, max_size=15))
def test_c_index_matches_enumeration(rows):
    r, t, e = (list(x) for x in zip(*rows))
    try:
        got = c_index(r, t, e)
    except MetricError:
        assert not any(t[i] < t[j] and e[i] for i, j in itertools.permutations(range(len(r)), 2))
        return
    assert got == pytest.approx(brute_c(r, t, e), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_c_index_negation(seed):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=12)
    t = rng.permutation(12) + 1.0
    e = rng.random(12) < 0.7
    e[np.argmin(t)] = True
    assert c_index(r, t, e) == pytest.approx(1.0 - c_index(-r, t, e), abs=1e-12)


# ------------------------------------------------------------ aggregate


def test_aggregate_uses_population_std():
    reps = [MetricsReport("classification", {"auc": v, "acc": 0.5, "f1": 0.5}, n_samples=10) for v in (0.6, 0.8)]
    agg = aggregate(reps)
    assert agg.mean["auc"] == pytest.approx(0.7)
    assert agg.std["auc"] == pytest.approx(0.1)
    assert agg.per_fold["auc"] == [0.6, 0.8]
    assert agg.n_samples == 20
    with pytest.raises(MetricError):
        aggregate([])


def test_report_dict_round_trip():
    rep = survival_report([3, 1, 2], [1, 2, 3], [1, 0, 1])
    assert rep.values == {"c_index": 1.0}
    assert MetricsReport.from_dict(rep.to_dict()) == rep
