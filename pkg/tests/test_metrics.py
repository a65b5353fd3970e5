import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idian.data import DomainDataset
from idian.metrics import (auc, auc_pairwise, auc_ranksum, confusion_matrix, evaluate,
                           precision_recall_f1, report_from_predictions)
from idian.networks import Widths, build_model


def onehot(pred, n):
    return np.eye(n)[pred]


def test_perfect_predictor():
    y = np.array([0, 1, 1, 0, 1])
    r = report_from_predictions(y, onehot(y, 2) * 0.8 + 0.1, 2)
    assert (r.acc, r.precision, r.recall, r.f1, r.auc) == (1.0, 1.0, 1.0, 1.0, 1.0)


def test_counted_confusion():
    # TP=3, FP=1, FN=2, TN=4
    y = np.array([1, 1, 1, 0, 1, 1, 0, 0, 0, 0])
    p = np.array([1, 1, 1, 1, 0, 0, 0, 0, 0, 0])
    r = report_from_predictions(y, onehot(p, 2), 2)
    assert r.precision == pytest.approx(0.75)
    assert r.recall == pytest.approx(0.6)
    assert r.f1 == pytest.approx(2 / 3, abs=1e-4)
    assert r.acc == pytest.approx(0.7)
    assert r.confusion == [[4, 1], [2, 3]]


def test_constant_predictor_is_degenerate():
    y = np.array([0, 1] * 5)
    r = report_from_predictions(y, onehot(np.zeros(10, int), 2), 2)
    assert r.acc == 0.5
    assert r.precision == 0.0 and r.degenerate


@pytest.mark.parametrize("scores,labels,expected", [
    ([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0], 1.0),
    ([0.9, 0.4, 0.6, 0.2], [1, 0, 0, 1], 0.5),
    ([0.3, 0.3, 0.3, 0.3], [1, 0, 0, 1], 0.5),
])
def test_auc_examples(scores, labels, expected):
    assert auc_pairwise(scores, labels) == expected
    assert auc_ranksum(scores, labels) == expected


def test_auc_single_class():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


def binary_case(draw_scores):
    return st.integers(2, 40).flatmap(lambda n: st.tuples(
        draw_scores(n), st.lists(st.integers(0, 1), min_size=n, max_size=n)
        .filter(lambda ls: 0 < sum(ls) < len(ls))))


tied_scores = lambda n: st.lists(st.integers(0, 5).map(float), min_size=n, max_size=n)
# integer-valued so the transforms below cannot merge distinct scores through rounding
free_scores = lambda n: st.lists(st.integers(-1000, 1000).map(float), min_size=n, max_size=n)


@settings(max_examples=100, deadline=None)
@given(binary_case(tied_scores))
def test_auc_agrees_with_ties(case):
    s, y = case
    assert auc_pairwise(s, y) == pytest.approx(auc_ranksum(s, y), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(binary_case(free_scores))
def test_auc_invariant_under_monotone_transform(case):
    s, y = case
    s = np.asarray(s)
    assert auc_pairwise(np.exp(s / 100) * 3 + 1, y) == auc_pairwise(s, y)


@settings(max_examples=60, deadline=None)
@given(binary_case(free_scores))
def test_auc_label_flip(case):
    s, y = case
    assert auc_pairwise(s, 1 - np.asarray(y)) == pytest.approx(1 - auc_pairwise(s, y), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5).flatmap(lambda k: st.tuples(
    st.just(k), st.lists(st.tuples(st.integers(0, k - 1), st.integers(0, k - 1)), min_size=1, max_size=50))))
def test_confusion_counts(case):
    k, pairs = case
    y, p = np.array(pairs).T
    cm = confusion_matrix(y, p, k)
    assert cm.sum() == len(y)
    for a in range(k):
        for b in range(k):
            assert cm[a, b] == sum(1 for t, q in pairs if t == a and q == b)


def test_macro_average_for_many_classes():
    cm = np.array([[2, 0, 0], [0, 1, 1], [0, 1, 1]])
    p, r, f, degenerate = precision_recall_f1(cm, None)
    assert p == pytest.approx((1 + 0.5 + 0.5) / 3)
    assert r == pytest.approx((1 + 0.5 + 0.5) / 3)
    assert not degenerate


def test_evaluate_skips_unlabeled_rows():
    model = build_model(4, 3, 2, 0, Widths.uniform(4))
    x = np.random.default_rng(0).random((5, 3))
    test = DomainDataset("target", x, np.ones_like(x), [0, 1, -1, 1, -1], 2)
    r = evaluate(model, test)
    assert r.n_eval == 3 and r.n_excluded == 2
    assert r.auc is not None
