import itertools
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ubergnn.errors import InvalidArgumentError
from ubergnn.metrics import (EvalResult, evaluate_ranks, hit_rate, mrr_at_k, precision_at_k,
                             random_mrr_expectation, random_precision_expectation, ranks_from_scores,
                             reciprocal_rank, top_k)

N = 30


def ranking_with_label_at(rank, label=0, n=N):
    others = [i for i in range(n) if i != label]
    return others[:rank - 1] + [label] + others[rank - 1:]


def test_first_place_everywhere():
    rankings = [ranking_with_label_at(1, label=l) for l in range(5)]
    assert precision_at_k(rankings, list(range(5))) == 1.0
    assert mrr_at_k(rankings, list(range(5))) == 1.0


def test_twenty_first_everywhere():
    rankings = [ranking_with_label_at(21) for _ in range(4)]
    assert precision_at_k(rankings, [0] * 4) == 0.0
    assert mrr_at_k(rankings, [0] * 4) == 0.0


def test_ranks_5_20_21():
    rankings = [ranking_with_label_at(r) for r in (5, 20, 21)]
    assert precision_at_k(rankings, [0, 0, 0], 20) == pytest.approx(2 / 3, abs=0)


def test_rank_contributions():
    assert mrr_at_k([ranking_with_label_at(1)], [0]) == 1.0
    assert mrr_at_k([ranking_with_label_at(2)], [0]) == 0.5


def test_ranks_1_2_25():
    rankings = [ranking_with_label_at(r) for r in (1, 2, 25)]
    assert precision_at_k(rankings, [0, 0, 0], 20) == 2 / 3
    assert mrr_at_k(rankings, [0, 0, 0], 20) == 0.5
    res = evaluate_ranks(np.array([1, 2, 25]))
    assert (res.p_at_k, res.mrr_at_k, res.n_cases) == (2 / 3, 0.5, 3)


def test_empty_cases():
    with pytest.raises(InvalidArgumentError):
        precision_at_k([], [])
    with pytest.raises(InvalidArgumentError):
        reciprocal_rank(np.array([]))
    with pytest.raises(InvalidArgumentError):
        mrr_at_k([[0, 1]], [0, 1])


def test_ranks_from_scores_tie_break():
    scores = np.array([[0.2, 0.5, 0.5, 0.1]])
    assert ranks_from_scores(scores, [1]).tolist() == [1]
    assert ranks_from_scores(scores, [2]).tolist() == [2]
    assert top_k(scores, 4).tolist() == [[1, 2, 0, 3]]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_rank_consistency_with_top_k(seed):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 4, size=(6, 9)).astype(float)      # many ties
    labels = rng.integers(0, 9, size=6)
    ranks = ranks_from_scores(scores, labels)
    order = top_k(scores, 9)
    assert [list(row).index(l) + 1 for row, l in zip(order, labels)] == ranks.tolist()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_monotone_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=(8, 40))
    labels = rng.integers(0, 40, size=8)
    base = ranks_from_scores(scores, labels)
    for f in (np.exp, lambda x: 3 * x + 7, np.arctan):
        assert np.array_equal(ranks_from_scores(f(scores), labels), base)


@given(st.lists(st.integers(1, 60), min_size=1, max_size=50), st.integers(1, 40))
def test_mrr_below_precision(ranks, k):
    r = np.array(ranks)
    assert 0 <= reciprocal_rank(r, k) <= hit_rate(r, k) <= 1


@given(st.lists(st.integers(1, 60), min_size=1, max_size=30), st.lists(st.integers(1, 60), min_size=1, max_size=30))
def test_concatenation_is_weighted_average(a, b):
    ra, rb = np.array(a), np.array(b)
    both = np.concatenate([ra, rb])
    n = len(a) + len(b)
    assert hit_rate(both) == pytest.approx((hit_rate(ra) * len(a) + hit_rate(rb) * len(b)) / n, abs=1e-12)
    assert reciprocal_rank(both) == pytest.approx(
        (reciprocal_rank(ra) * len(a) + reciprocal_rank(rb) * len(b)) / n, abs=1e-12)


@pytest.mark.parametrize("n,k", [(3, 2), (5, 3), (6, 6), (7, 20)])
def test_random_expectation_matches_permutations(n, k):
    """Average over every ranking of n items, label fixed at 0."""
    mrr, hits, count = Fraction(0), Fraction(0), 0
    for perm in itertools.permutations(range(n)):
        rank = perm.index(0) + 1
        count += 1
        if rank <= k:
            mrr += Fraction(1, rank)
            hits += 1
    assert random_mrr_expectation(n, k) == pytest.approx(float(mrr / count), abs=1e-15)
    assert random_precision_expectation(n, k) == pytest.approx(float(hits / count), abs=1e-15)


def test_random_baseline_default():
    assert random_precision_expectation(500) == 0.04
    assert random_mrr_expectation(500) == pytest.approx(sum(1 / r for r in range(1, 21)) / 500)


def test_report_formats():
    res = EvalResult(0.5, 0.25, 4)
    assert json.loads(res.to_json()) == {"k": 20, "p_at_k": 0.5, "mrr_at_k": 0.25, "n_cases": 4}
    lines = res.table().splitlines()
    assert lines[1].split() == ["P@20", "0.5000"]
    assert len({len(line) for line in lines}) == 1
