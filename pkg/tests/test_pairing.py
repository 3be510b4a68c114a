from __future__ import annotations

from collections import Counter
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from siamese_fewshot.pairing import (
    DIFFERENT,
    SAME,
    PairingConfig,
    PairingError,
    balance_by_oversampling,
    enumerate_pairs,
    imbalance_ratio,
    iter_batches,
    pair_counts,
    sample_pairs,
)


def _labels_of(ds):
    return {s.id: s.label for s in ds.samples}


# ---- enumerate_pairs


def test_enumerate_five():
    ds = make_dataset({0: 3, 1: 2}, shape=(1, 1, 1))
    pairs = enumerate_pairs(ds)
    ys = Counter(p.y for p in pairs)
    assert ys == {SAME: 4, DIFFERENT: 6}


def test_enumerate_single_class():
    ds = make_dataset({0: 7}, shape=(1, 1, 1))
    pairs = enumerate_pairs(ds)
    assert len(pairs) == 21 and all(p.y == SAME for p in pairs)


def test_enumerate_one_per_class():
    pairs = enumerate_pairs(make_dataset({0: 1, 1: 1}, shape=(1, 1, 1)))
    assert len(pairs) == 1 and pairs[0].y == DIFFERENT


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=50))
def test_enumerate_matches_brute_force(labels):
    counts = Counter(labels)
    ds = make_dataset(dict(counts), shape=(1, 1, 1))
    lab = ds.labels
    same = sum(1 for i, j in combinations(range(len(lab)), 2) if lab[i] == lab[j])
    pairs = enumerate_pairs(ds)
    assert len(pairs) == len(lab) * (len(lab) - 1) // 2
    assert sum(p.y == SAME for p in pairs) == same
    assert len({(p.a, p.b) for p in pairs}) == len(pairs)


# ---- imbalance ratio and oversampling


@pytest.mark.parametrize("counts,expected", [((100, 10), 0.1), ((50, 50), 1.0), ((100, 1), 0.01)])
def test_imbalance_ratio(counts, expected):
    ds = make_dataset({0: counts[0], 1: counts[1]}, shape=(1, 1, 1))
    assert imbalance_ratio(ds) == expected


def test_oversample_hundred_ten():
    ds = make_dataset({0: 100, 1: 10}, shape=(1, 1, 1))
    view = balance_by_oversampling(ds, np.random.default_rng(0))
    assert view.class_counts() == {0: 100, 1: 100}
    minority = Counter(int(i) for i in view.indices if ds.labels[i] == 1)
    assert set(minority.values()) == {10} and len(minority) == 10


def test_oversample_balanced_unchanged():
    ds = make_dataset({0: 100, 1: 100}, shape=(1, 1, 1))
    view = balance_by_oversampling(ds, np.random.default_rng(0))
    np.testing.assert_array_equal(view.indices, np.arange(200))


def test_oversample_single_minority():
    ds = make_dataset({0: 100, 1: 1}, shape=(1, 1, 1))
    view = balance_by_oversampling(ds, np.random.default_rng(0))
    assert Counter(int(i) for i in view.indices)[100] == 100


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 1000))
def test_oversample_properties(a, b, seed):
    ds = make_dataset({0: a, 1: b}, shape=(1, 1, 1))
    view = balance_by_oversampling(ds, np.random.default_rng(seed))
    big, small = (0, 1) if a >= b else (1, 0)
    assert imbalance_ratio(view) == 1.0
    # majority multiset preserved exactly
    maj = sorted(int(i) for i in view.indices if ds.labels[i] == big)
    assert maj == sorted(np.flatnonzero(ds.labels == big).tolist())
    # minority copies differ by at most one
    copies = Counter(int(i) for i in view.indices if ds.labels[i] == small)
    assert max(copies.values()) - min(copies.values()) <= 1
    assert len(copies) == min(a, b)


# ---- stream composition


@pytest.mark.parametrize("ratio,n,expected", [((1, 1), 200, (100, 100)), ((1, 5), 600, (100, 500)),
                                              ((5, 1), 60, (50, 10)), ((3, 2), 7, (4, 3))])
def test_pair_counts(ratio, n, expected):
    assert pair_counts(n, *ratio) == expected


@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 5000))
def test_pair_counts_rounding_bound(rp, rn, extra):
    n = rp + rn + extra
    pos, neg = pair_counts(n, rp, rn)
    assert pos + neg == n and pos >= 1 and neg >= 1
    assert abs(pos * rn - neg * rp) <= max(rp, rn)


@pytest.mark.parametrize("ratio,n,expected", [("1:1", 200, (100, 100)), ("1:5", 600, (100, 500))])
def test_stream_composition(ratio, n, expected):
    ds = make_dataset({0: 40, 1: 30}, shape=(1, 1, 1))
    cfg = PairingConfig(*PairingConfig.parse_ratio(ratio), pairs_per_epoch=n)
    pairs = sample_pairs(ds, cfg, np.random.default_rng(0))
    counts = Counter(p.y for p in pairs)
    assert (counts[SAME], counts[DIFFERENT]) == expected


def test_high_imbalance_stream_reuses_single_minority():
    ds = make_dataset({0: 100, 1: 1}, shape=(1, 1, 1))
    minority_id = next(s.id for s in ds.samples if s.label == 1)
    pairs = sample_pairs(ds, PairingConfig(5, 1), np.random.default_rng(1))
    different = [p for p in pairs if p.y == DIFFERENT]
    assert len(different) > 1
    assert all(minority_id in (p.a, p.b) for p in different)
    # with one minority sample no same-class pair can include it
    assert not any(minority_id in (p.a, p.b) for p in pairs if p.y == SAME)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(2, 30), st.integers(1, 30), st.booleans(),
       st.integers(0, 10**6))
def test_stream_labels_sound(rp, rn, a, b, balanced, seed):
    ds = make_dataset({0: a, 1: b}, shape=(1, 1, 1))
    lab = _labels_of(ds)
    cfg = PairingConfig(rp, rn, balanced)
    pairs = sample_pairs(ds, cfg, np.random.default_rng(seed))
    for p in pairs:
        assert p.y == (SAME if lab[p.a] == lab[p.b] else DIFFERENT)
        assert p.ia != p.ib
    c = Counter(p.y for p in pairs)
    assert abs(c[SAME] * rn - c[DIFFERENT] * rp) <= max(rp, rn)


def test_stream_deterministic_and_shuffled():
    ds = make_dataset({0: 20, 1: 20}, shape=(1, 1, 1))
    cfg = PairingConfig(1, 1, pairs_per_epoch=100)
    a = sample_pairs(ds, cfg, np.random.default_rng(3))
    b = sample_pairs(ds, cfg, np.random.default_rng(3))
    assert a == b
    ys = [p.y for p in a]
    assert ys != sorted(ys)


def test_same_class_partner_uniform():
    # first member fixed by a 2-sample positive pool; partners must cover the class evenly
    ds = make_dataset({0: 4, 1: 2}, shape=(1, 1, 1))
    pairs = sample_pairs(ds, PairingConfig(1, 1, pairs_per_epoch=8000), np.random.default_rng(5))
    partners = Counter((p.a, p.b) for p in pairs if p.y == SAME and p.a == "toy:0:0")
    assert set(partners) == {("toy:0:0", f"toy:0:{i}") for i in (1, 2, 3)}
    vals = np.array(list(partners.values()))
    assert vals.min() / vals.max() > 0.8


def test_unpairable_requests_rejected():
    single = make_dataset({0: 5}, shape=(1, 1, 1))
    with pytest.raises(PairingError):
        sample_pairs(single, PairingConfig(1, 1), np.random.default_rng(0))
    singletons = make_dataset({0: 1, 1: 1}, shape=(1, 1, 1))
    with pytest.raises(PairingError):
        sample_pairs(singletons, PairingConfig(1, 1), np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(PairingError):
        PairingConfig.parse_ratio("3-2")
    with pytest.raises(PairingError):
        PairingConfig(0, 1)
    assert PairingConfig(2, 3).ratio == "2:3"
    assert PairingConfig().epoch_pairs(50) == 100


def test_iter_batches():
    ds = make_dataset({0: 5, 1: 5}, shape=(1, 1, 1))
    pairs = sample_pairs(ds, PairingConfig(pairs_per_epoch=70), np.random.default_rng(0))
    sizes = [len(b) for b in iter_batches(pairs, 32)]
    assert sizes == [32, 32, 6]
