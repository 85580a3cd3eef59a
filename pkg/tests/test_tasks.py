import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from oracles import auc_pairs, ef_oracle, re_oracle

from bitmol.tasks import (auc_roc, enrichment_factor, infonce_loss, maxmin_select, regression_metrics,
                          roc_enrichment, score_matrix, screening_metrics, split_indices, top_count)


pools = st.integers(2, 50).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 6).map(float), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n)))


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------

def test_regression_hand_example():
    m = regression_metrics([0, 2, 1], [0, 1, 2])
    assert abs(m.rmse - math.sqrt(2 / 3)) < 1e-12
    assert abs(m.mae - 2 / 3) < 1e-12
    assert abs(m.r - 0.5) < 1e-12
    assert abs(m.sd - math.sqrt(0.75)) < 1e-12


def test_regression_identity_and_shift():
    y = np.array([1.0, 3.0, 2.0, 5.0])
    m = regression_metrics(y, y)
    assert m.rmse == m.mae == 0 and m.r == 1 and m.sd < 1e-12
    m = regression_metrics(y + 1, y)
    assert abs(m.rmse - 1) < 1e-12 and abs(m.mae - 1) < 1e-12 and abs(m.r - 1) < 1e-12 and m.sd < 1e-12


def test_regression_error_states():
    m = regression_metrics([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    assert m.r is None and m.sd is None and m.error == "constant predictions"
    m = regression_metrics([1.0, 2.0], [1.0, 3.0])
    assert m.sd is None and m.r == pytest.approx(1.0)
    with pytest.raises(ValueError):
        regression_metrics([], [])
    with pytest.raises(ValueError):
        regression_metrics([1.0], [1.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.1, 10), st.floats(-5, 5))
def test_regression_invariants(seed, a, b):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=12)
    pred = y + rng.normal(size=12)
    m = regression_metrics(pred, y)
    m2 = regression_metrics(a * pred + b, y)
    assert m.rmse >= m.mae >= 0 and -1 <= m.r <= 1 and m.sd >= 0
    assert abs(m.r - m2.r) < 1e-9
    assert abs(m.sd - m2.sd) < 1e-9


# ---------------------------------------------------------------------------
# screening metrics
# ---------------------------------------------------------------------------

def test_auc_examples():
    assert auc_roc([0.9, 0.4, 0.8, 0.1], [1, 1, 0, 0]) == 0.75
    assert auc_roc([3, 2, 1, 0], [1, 1, 0, 0]) == 1.0
    assert auc_roc([1, 1], [1, 0]) == 0.5
    with pytest.raises(ValueError):
        auc_roc([1, 2], [1, 1])


def test_auc_null():
    rng = np.random.default_rng(0)
    assert abs(auc_roc(rng.random(10_000), rng.random(10_000) < 0.5) - 0.5) < 0.05


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 200).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 20).map(float), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n))))
def test_auc_matches_pair_enumeration(pool):
    scores, labels = pool
    if all(labels) or not any(labels):
        return
    assert auc_roc(scores, labels) == float(auc_pairs(scores, labels))


def test_ef_examples():
    scores = np.arange(1000, 0, -1, dtype=float)
    labels = np.zeros(1000, dtype=bool)
    labels[[0, 1, 2, 50, 60, 70, 80, 90, 100, 110]] = True
    assert enrichment_factor(scores, labels, 0.01) == pytest.approx(30)
    labels = np.zeros(1000, dtype=bool)
    labels[:10] = True
    assert enrichment_factor(scores, labels, 0.01) == pytest.approx(100)
    labels = np.zeros(1000, dtype=bool)
    labels[-10:] = True
    assert enrichment_factor(scores, labels, 0.01) == 0
    with pytest.raises(ValueError):
        enrichment_factor(scores, np.zeros(1000), 0.01)
    assert top_count(0.01, 1000) == 10 and top_count(0.07, 100) == 7 and top_count(0.001, 10) == 1


def test_ef_ties_keep_input_order():
    assert enrichment_factor([1.0, 1.0, 0.0, 0.0], [0, 1, 0, 0], 0.25) == 0
    assert enrichment_factor([1.0, 1.0, 0.0, 0.0], [1, 0, 0, 0], 0.25) == 4


def test_re_examples():
    # 1100 compounds, 100 actives; the cut at the 10th decoy holds 50 actives
    labels = np.array([True] * 50 + [False] * 10 + [True] * 50 + [False] * 990)
    scores = np.arange(len(labels), 0, -1, dtype=float)
    assert roc_enrichment(scores, labels, 0.01) == pytest.approx(55)
    labels = np.array([True] * 100 + [False] * 1000)
    scores = np.arange(len(labels), 0, -1, dtype=float)
    assert roc_enrichment(scores, labels, 0.005) == pytest.approx(1100 / 5)
    with pytest.raises(ValueError):
        roc_enrichment(scores, np.ones(1100), 0.01)


def test_re_random_expectation():
    rng = np.random.default_rng(1)
    vals = [roc_enrichment(rng.random(10_000), rng.random(10_000) < 0.1, 0.05) for _ in range(20)]
    assert abs(np.mean(vals) - 1) < 0.2


@settings(max_examples=300, deadline=None)
@given(pools, st.sampled_from([0.01, 0.05, 0.1, 0.2, 0.3, 0.5]))
def test_ef_re_match_oracles(pool, frac):
    scores, labels = pool
    labels = [bool(x) for x in labels]
    if any(labels):
        assert enrichment_factor(scores, labels, frac) == ef_oracle(scores, labels, frac)
    if any(labels) and not all(labels):
        assert roc_enrichment(scores, labels, frac) == re_oracle(scores, labels, frac)


def test_screening_metrics_bundle():
    rng = np.random.default_rng(2)
    labels = rng.random(300) < 0.1
    m = screening_metrics(rng.random(300) + labels, labels)
    assert 0 <= m.auc <= 1 and all(v >= 0 for v in m.ef.values()) and all(v >= 0 for v in m.re.values())
    assert set(m.to_json()["ef"]) == {"0.005", "0.01", "0.02", "0.05"}


# ---------------------------------------------------------------------------
# InfoNCE and scoring
# ---------------------------------------------------------------------------

def unit(rng, *shape):
    v = rng.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_infonce_uniform_and_limit():
    p = np.array([1.0, 0.0])
    a = np.array([0.0, 1.0])
    decoys = np.tile(a, (64, 1))
    assert abs(infonce_loss(p, a, decoys) - math.log(65)) < 1e-12
    assert abs(math.log(65) - 4.174) < 1e-3
    assert infonce_loss(p, p, np.tile(-p, (64, 1)), temperature=0.01) < 1e-12
    with pytest.raises(ValueError):
        infonce_loss(p, a, decoys, temperature=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 20))
def test_infonce_properties(seed, k):
    rng = np.random.default_rng(seed)
    p = unit(rng, 8)
    decoys = unit(rng, k, 8)
    loss = infonce_loss(torch.tensor(p), torch.tensor(unit(rng, 8)), torch.tensor(decoys))
    assert float(loss) >= 0
    from bitmol.tasks import infonce_from_scores
    s_dec = torch.tensor(decoys @ p)
    prev = None
    for s in np.linspace(-1, 1, 7):
        cur = float(infonce_from_scores(torch.tensor(s), s_dec))
        assert prev is None or cur < prev
        prev = cur


def test_score_matrix_transpose_bitwise():
    rng = np.random.default_rng(3)
    a, b = unit(rng, 17, 32), unit(rng, 29, 32)
    assert np.array_equal(score_matrix(a, b), score_matrix(b, a).T)
    assert np.allclose(score_matrix(a, b), a @ b.T, atol=1e-12)


# ---------------------------------------------------------------------------
# splits and diversity
# ---------------------------------------------------------------------------

def test_split_indices():
    tr, va = split_indices(10, 0.25, 0)
    assert len(va) >= 1 and len(tr) >= 1 and sorted(np.concatenate([tr, va])) == list(range(10))
    assert all(np.array_equal(x, y) for x, y in zip(split_indices(10, 0.25, 0), (tr, va)))
    with pytest.raises(ValueError):
        split_indices(1, 0.25, 0)


def test_maxmin_select():
    pts = np.array([[0.0, 0], [0.1, 0], [5, 0], [0, 3], [5.1, 0]])
    assert maxmin_select(pts, 3) == [0, 4, 3]
    assert maxmin_select(pts, 5)[0] == 0 and sorted(maxmin_select(pts, 5)) == list(range(5))
    tie = np.array([[0.0, 0], [1, 0], [-1, 0]])
    assert maxmin_select(tie, 2) == [0, 1]
    with pytest.raises(ValueError):
        maxmin_select(pts, 6)
