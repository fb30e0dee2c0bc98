import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgqa import (
    AnswerScores,
    Subgraph,
    build_target,
    f1_score,
    hits_at_1,
    kl_divergence,
    kl_grad_logits,
    score_entities,
    serialize_subgraph,
    uniform_probs,
)
from kgqa.head import PROB_FLOOR, kl_loss, softmax_1d
from kgqa.serialize import SerializedSubgraph


def _scores(probs, ids=None):
    probs = np.asarray(probs, dtype=np.float64)
    n = len(probs)
    return AnswerScores(
        positions=np.arange(n, dtype=np.int64),
        entity_ids=np.asarray(ids if ids is not None else range(n), dtype=np.int64),
        probs=probs,
    )


def test_softmax_frozen_values():
    assert softmax_1d(np.array([3.7])) == np.array([1.0])
    assert np.array_equal(softmax_1d(np.zeros(4)), np.full(4, 0.25))
    got = softmax_1d(np.array([math.log(3.0), 0.0]))
    assert np.allclose(got, [0.75, 0.25], atol=1e-15)


def test_score_entities_applies_head_then_softmax():
    h = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [0.5, 0.5]])
    w = np.array([1.0, 2.0])
    positions = np.array([0, 1, 3])
    ids = np.array([7, 8, 9])
    scores = score_entities(h, positions, ids, w, np.array(0.5))
    logits = h[positions] @ w + 0.5
    assert np.array_equal(scores.probs, softmax_1d(logits))
    # hand values: logits are [1.5, 2.5, 2.0], so entity 8 wins
    assert scores.top_entity() == 8


def test_score_entities_rejects_empty():
    with pytest.raises(ValueError):
        score_entities(np.zeros((3, 2)), np.array([]), np.array([]), np.zeros(2), 0.0)


def test_top_entity_tie_breaks_to_lowest_position():
    assert _scores([0.5, 0.5], ids=[5, 3]).top_entity() == 5


def test_shift_in_bias_leaves_probs_unchanged():
    h = np.random.default_rng(0).normal(size=(4, 3))
    pos = np.arange(4)
    ids = np.arange(4)
    w = np.array([0.3, -0.2, 1.0])
    a = score_entities(h, pos, ids, w, np.array(0.0))
    b = score_entities(h, pos, ids, w, np.array(17.0))
    assert np.allclose(a.probs, b.probs, atol=1e-15)


def test_uniform_probs_sums_exactly_to_one():
    for k in range(1, 65):
        hit = np.zeros(70, dtype=bool)
        hit[:k] = True
        probs = uniform_probs(hit, 70)
        assert float(probs.sum()) == 1.0
        assert np.abs(probs[hit] - 1.0 / k).max() <= 8 * np.finfo(np.float64).eps
        assert (probs[~hit] == 0.0).all()


def test_uniform_probs_needs_a_selection():
    with pytest.raises(ValueError):
        uniform_probs(np.zeros(3, dtype=bool), 3)


def test_build_target_tiny_fixture(tiny_subgraph):
    ser = serialize_subgraph(tiny_subgraph)  # tokens A r B s D C
    n_q = 2
    single = build_target({2}, ser, n_q)  # answer C
    assert single.positions.tolist() == [2, 4, 6, 7]
    assert single.entity_ids.tolist() == [0, 1, 3, 2]
    assert single.probs.tolist() == [0.0, 0.0, 0.0, 1.0]
    double = build_target({1, 3}, ser, n_q)  # answers B and D
    assert double.probs.tolist() == [0.0, 0.5, 0.5, 0.0]
    assert float(double.probs.sum()) == 1.0
    assert build_target({99}, ser, n_q) is None


def test_build_target_without_entity_rows():
    empty = SerializedSubgraph(tokens=(), adjacency=frozenset(), topic_positions=())
    assert build_target({0}, empty, 3) is None


def test_kl_frozen_value():
    assert np.isclose(kl_divergence(np.array([1.0, 0.0]), np.array([0.5, 0.5])), math.log(2.0))


def test_kl_of_identical_distributions_is_zero():
    t = np.array([0.25, 0.25, 0.5])
    assert kl_divergence(t, t) == 0.0


def test_kl_ignores_zero_target_mass():
    # 0 * ln 0 = 0: a zero-probability target coordinate contributes nothing
    assert kl_divergence(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 0.0


def test_kl_floors_predicted_side():
    val = kl_divergence(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert np.isclose(val, -math.log(PROB_FLOOR))


def test_kl_loss_validates_inputs(tiny_subgraph):
    t = build_target({2}, serialize_subgraph(tiny_subgraph), 1)
    good = _scores([0.25, 0.25, 0.25, 0.25])
    bad = AnswerScores(
        positions=t.positions, entity_ids=t.entity_ids, probs=np.array([0.9, 0.9, 0.1, 0.1])
    )
    with pytest.raises(ValueError, match="do not form a distribution"):
        kl_loss(t, bad)
    mismatched = _scores([0.5, 0.5])
    with pytest.raises(ValueError, match="different positions"):
        kl_loss(t, mismatched)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=2, max_size=8),
    st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=2, max_size=8),
)
def test_kl_is_nonnegative(raw_t, raw_p):
    n = min(len(raw_t), len(raw_p))
    t = np.array(raw_t[:n]) / np.sum(raw_t[:n])
    p = np.array(raw_p[:n]) / np.sum(raw_p[:n])
    assert kl_divergence(t, p) >= -1e-12


def test_kl_grad_equals_predicted_minus_target():
    rng = np.random.default_rng(3)
    t = rng.dirichlet(np.ones(6))
    p = softmax_1d(rng.normal(size=6))
    assert np.allclose(kl_grad_logits(t, p), p - t, atol=1e-15)


def test_kl_grad_matches_finite_differences():
    rng = np.random.default_rng(4)
    t = rng.dirichlet(np.ones(5))
    z = rng.normal(size=5)

    def loss(logits):
        return kl_divergence(t, softmax_1d(logits))

    grad = kl_grad_logits(t, softmax_1d(z))
    eps = 1e-7
    for i in range(5):
        zp, zm = z.copy(), z.copy()
        zp[i] += eps
        zm[i] -= eps
        numeric = (loss(zp) - loss(zm)) / (2 * eps)
        assert abs(grad[i] - numeric) < 1e-7


def test_kl_grad_respects_the_floor():
    """A predicted probability pinned below the floor has zero local slope."""
    t = np.array([0.5, 0.5, 0.0])
    z = np.array([0.0, -40.0, 0.0])  # p[1] underflows past 1e-12
    p = softmax_1d(z)
    assert p[1] < PROB_FLOOR
    grad = kl_grad_logits(t, p)
    eps = 1e-6
    for i in range(3):
        zp, zm = z.copy(), z.copy()
        zp[i] += eps
        zm[i] -= eps
        numeric = (
            kl_divergence(t, softmax_1d(zp)) - kl_divergence(t, softmax_1d(zm))
        ) / (2 * eps)
        assert abs(grad[i] - numeric) < 1e-6


def test_hits_at_1():
    scores = _scores([0.1, 0.7, 0.2], ids=[4, 5, 6])
    assert hits_at_1(scores, {5}) == 1
    assert hits_at_1(scores, {4, 6}) == 0


def test_f1_frozen_example():
    scores = _scores([0.6, 0.3, 0.1], ids=[10, 11, 12])
    precision, recall, f1 = f1_score(scores, {11}, threshold=0.5)
    assert (precision, recall) == (0.5, 1.0)
    assert np.isclose(f1, 2 / 3)


def test_f1_threshold_is_relative_to_max():
    scores = _scores([0.5, 0.25, 0.25], ids=[1, 2, 3])
    # cut = 0.5 * 0.5 = 0.25: ties at the cut are included
    precision, recall, f1 = f1_score(scores, {1, 2, 3}, threshold=0.5)
    assert (precision, recall, f1) == (1.0, 1.0, 1.0)
    # threshold 1.0 keeps only the argmax
    precision, _recall, _f1 = f1_score(scores, {1}, threshold=1.0)
    assert precision == 1.0


def test_f1_perfect_and_disjoint():
    scores = _scores([1.0, 0.0], ids=[1, 2])
    assert f1_score(scores, {1}) == (1.0, 1.0, 1.0)
    assert f1_score(scores, {2}, threshold=1.0) == (0.0, 0.0, 0.0)


def test_f1_threshold_validation():
    scores = _scores([1.0], ids=[1])
    with pytest.raises(ValueError):
        f1_score(scores, {1}, threshold=0.0)
    with pytest.raises(ValueError):
        f1_score(scores, {1}, threshold=1.5)
