"""Answer scoring over entity positions, soft targets, the KL objective, and
ranking metrics (Hits@1, set F1)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .serialize import SerializedSubgraph

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class AnswerScores:
    """Probabilities over the entity positions of one input (softmax-normalized)."""

    positions: np.ndarray  # absolute positions, ascending
    entity_ids: np.ndarray
    probs: np.ndarray

    def top_entity(self) -> int:
        """Argmax entity id; ties resolve to the lowest position."""
        return int(self.entity_ids[int(np.argmax(self.probs))])


@dataclass(frozen=True)
class TargetDistribution:
    """Soft target over the same entity-position universe as `AnswerScores`."""

    positions: np.ndarray
    entity_ids: np.ndarray
    probs: np.ndarray


def softmax_1d(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def score_entities(
    h: np.ndarray,
    positions: np.ndarray,
    entity_ids: np.ndarray,
    w: np.ndarray,
    b: np.ndarray,
) -> AnswerScores:
    """Linear head on the entity rows of H, softmax restricted to those rows."""
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size == 0:
        raise ValueError("no entity positions to score")
    logits = h[positions] @ w + b
    return AnswerScores(
        positions=positions,
        entity_ids=np.asarray(entity_ids, dtype=np.int64),
        probs=softmax_1d(logits),
    )


def uniform_probs(hit: np.ndarray, size: int) -> np.ndarray:
    """Uniform distribution over `hit` positions whose float sum is exactly 1.

    1/k does not generally sum back to 1.0 in floating point (k=7 is the
    classic case), so the measured excess is folded into the last selected
    coordinate until the sum is exact; the perturbation is at most a few ulp.
    """
    hit = np.asarray(hit, dtype=bool)
    k = int(hit.sum())
    if not 1 <= k <= size:
        raise ValueError("need at least one selected position")
    probs = np.zeros(size, dtype=np.float64)
    probs[hit] = 1.0 / k
    last = int(np.nonzero(hit)[0][-1])
    for _ in range(8):
        excess = float(probs.sum()) - 1.0
        if excess == 0.0:
            return probs
        probs[last] -= excess
    raise AssertionError("uniform target failed to normalize exactly")


def build_target(
    answers: set[int] | frozenset[int],
    serialized: SerializedSubgraph,
    n_q: int,
) -> TargetDistribution | None:
    """Uniform distribution over the answer entities present in the serialization.

    Returns None when no answer entity appears (the caller skips the sample
    in training or scores it as a miss in evaluation).
    """
    positions, ids = [], []
    for p, tok in enumerate(serialized.tokens):
        if tok.kind == "entity":
            positions.append(n_q + p)
            ids.append(tok.id)
    if not positions:
        return None
    ids_arr = np.asarray(ids, dtype=np.int64)
    hit = np.asarray([int(i) in answers for i in ids_arr], dtype=bool)
    if not hit.any():
        return None
    return TargetDistribution(
        positions=np.asarray(positions, dtype=np.int64),
        entity_ids=ids_arr,
        probs=uniform_probs(hit, len(positions)),
    )


def _check_same_support(target: TargetDistribution, predicted: AnswerScores) -> None:
    if target.positions.shape != predicted.positions.shape or not np.array_equal(
        target.positions, predicted.positions
    ):
        raise ValueError("target and predicted distributions cover different positions")


def kl_divergence(target_probs: np.ndarray, predicted_probs: np.ndarray) -> float:
    """D(target || predicted) with the predicted side floored at 1e-12; 0·ln0 = 0."""
    t = np.asarray(target_probs, dtype=np.float64)
    p = np.maximum(np.asarray(predicted_probs, dtype=np.float64), PROB_FLOOR)
    nz = t > 0.0
    return float(np.sum(t[nz] * (np.log(t[nz]) - np.log(p[nz]))))


def kl_loss(target: TargetDistribution, predicted: AnswerScores) -> float:
    _check_same_support(target, predicted)
    for label, probs in (("target", target.probs), ("predicted", predicted.probs)):
        if (probs < 0.0).any() or abs(float(probs.sum()) - 1.0) > 1e-6:
            raise ValueError(f"{label} probabilities do not form a distribution")
    return kl_divergence(target.probs, predicted.probs)


def kl_grad_logits(target_probs: np.ndarray, predicted_probs: np.ndarray) -> np.ndarray:
    """Exact gradient of `kl_divergence` w.r.t. the predicted logits.

    Chains through the probability floor (zero slope where the floor is
    active) and the softmax; equals predicted - target when no flooring
    occurs.
    """
    t = np.asarray(target_probs, dtype=np.float64)
    p = np.asarray(predicted_probs, dtype=np.float64)
    floored = p < PROB_FLOOR
    dl_dp = np.zeros_like(p)
    active = (~floored) & (t > 0.0)
    dl_dp[active] = -t[active] / p[active]
    return p * (dl_dp - float(np.dot(dl_dp, p)))


def hits_at_1(scores: AnswerScores, answers: set[int] | frozenset[int]) -> int:
    return int(scores.top_entity() in answers)


def f1_score(
    scores: AnswerScores,
    answers: set[int] | frozenset[int],
    threshold: float = 0.5,
) -> tuple[float, float, float]:
    """Set F1 with predicted = entities scoring >= threshold * max score.

    The max scorer is always predicted (threshold <= 1), so the predicted set
    cannot be empty.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    cut = threshold * float(scores.probs.max())
    predicted = {int(e) for e, p in zip(scores.entity_ids, scores.probs) if p >= cut}
    gold = {int(a) for a in answers}
    inter = len(predicted & gold)
    precision = inter / len(predicted) if predicted else 0.0
    recall = inter / len(gold) if gold else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1
