import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siamese_fewshot.metrics import ClassCounts, MetricsError, aggregate, confusion, f1, macro_f1


def test_perfect_predictions():
    assert macro_f1(confusion([0, 1, 1, 0], [0, 1, 1, 0], [0, 1])) == 1.0


def test_single_class_predictor_on_balanced_set():
    # F1 for class 0 is 2/3, class 1 never predicted and scores 0
    assert macro_f1(confusion([0, 0, 0, 0], [0, 0, 1, 1], [0, 1])) == pytest.approx(1 / 3)


def test_counts_example():
    assert f1(ClassCounts(tp=8, fp=2, fn=4, tn=0)) == pytest.approx(16 / 22)


def test_zero_denominator_is_zero():
    assert f1(ClassCounts(0, 0, 0, 10)) == 0.0
    # class 2 absent from truth and predictions: it counts as 0 in the average
    assert macro_f1(confusion([0, 1], [0, 1], [0, 1, 2])) == pytest.approx(2 / 3)


def test_aggregate_population_std():
    r = aggregate([0.8, 0.9, 1.0])
    assert r.mean == pytest.approx(0.9)
    assert r.std == pytest.approx(np.sqrt(0.02 / 3))
    assert aggregate([0.5]).std == 0.0


def test_confusion_counts_and_errors():
    c = confusion([1, 1, 0, 0, 1], [1, 0, 0, 1, 1], [0, 1])
    assert c[1] == ClassCounts(tp=2, fp=1, fn=1, tn=1)
    assert c[0] == ClassCounts(tp=1, fp=1, fn=1, tn=2)
    with pytest.raises(MetricsError):
        confusion([0, 1], [0], [0, 1])
    with pytest.raises(MetricsError):
        confusion([0, 5], [0, 1], [0, 1])
    with pytest.raises(MetricsError):
        aggregate([])
    with pytest.raises(MetricsError):
        macro_f1({})


labels = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60)


@settings(max_examples=150, deadline=None)
@given(labels, st.permutations([0, 1, 2, 3]))
def test_bounds_and_relabel_invariance(pairs, perm):
    pred, true = [p for p, _ in pairs], [t for _, t in pairs]
    score = macro_f1(confusion(pred, true, range(4)))
    assert 0.0 <= score <= 1.0
    relabelled = macro_f1(confusion([perm[p] for p in pred], [perm[t] for t in true], range(4)))
    assert relabelled == pytest.approx(score, abs=1e-12)
    for c in confusion(pred, true, range(4)).values():
        assert c.tp + c.fp + c.fn + c.tn == len(pairs)
