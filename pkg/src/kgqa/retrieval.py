"""Relation retrieval: scoring and iterative top-k subgraph expansion.

The retriever reuses the reasoning encoder instead of a separate model: a
candidate relation is scored by encoding the question together with the
candidates as isolated relation tokens (empty adjacency, so each candidate
sees only itself and the question) and reading the scalar head at the
candidate's position.  Supervision comes from shortest relation paths between
topics and answers; retrieval then expands the frontier hop by hop, keeping
the k best-scoring frontier relations each time.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .datagen import QASample
from .encoder import forward
from .kg import KnowledgeGraph, Triple
from .params import ModelParameters
from .sequence import InputSequence, Vocabulary, build_input, split_text
from .serialize import RELATION, NodeToken, SerializedSubgraph, Subgraph


class RelationScore(NamedTuple):
    relation: int
    score: float


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 3
    max_hops: int = 3
    entity_cap: int = 100

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_hops < 1:
            raise ValueError("max_hops must be >= 1")
        if self.entity_cap < 1:
            raise ValueError("entity_cap must be >= 1")


@dataclass(frozen=True)
class RetrievalExample:
    """Scorer supervision for one question.

    `positives[h]` holds the relations used at step h+1 of some shortest
    topic-to-answer path; `negatives` are frontier relations on no such path,
    shared across hops so the same relation is never labelled both ways for
    one question.
    """

    question: str
    positives: tuple[frozenset[int], ...]
    negatives: tuple[int, ...]


def _bfs_distances(g: KnowledgeGraph, sources: Iterable[int], max_depth: int) -> dict[int, int]:
    dist = {int(s): 0 for s in sources}
    queue = deque(dist)
    while queue:
        u = queue.popleft()
        if dist[u] >= max_depth:
            continue
        for t in g.neighborhood(u):
            v = t.tail if t.head == u else t.head
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def mine_training_pairs(
    g: KnowledgeGraph,
    samples: Sequence[QASample],
    rng: np.random.Generator,
    max_hops: int = 4,
    n_negatives: int = 8,
) -> tuple[list[RetrievalExample], int]:
    """Shortest-path supervision mined from QA samples against the full graph.

    Returns the examples plus the count of samples skipped because no answer
    lies within `max_hops` of the topics.
    """
    examples: list[RetrievalExample] = []
    skipped = 0
    for s in samples:
        dist = _bfs_distances(g, s.topics, max_hops)
        targets = [a for a in s.answers if 1 <= dist.get(a, max_hops + 1) <= max_hops]
        if not targets:
            skipped += 1
            continue
        d_max = max(dist[a] for a in targets)
        positives: list[set[int]] = [set() for _ in range(d_max)]
        for a in targets:
            layer = {a}
            for depth in range(dist[a], 0, -1):
                prev: set[int] = set()
                for v in layer:
                    for t in g.neighborhood(v):
                        u = t.tail if t.head == v else t.head
                        if dist.get(u) == depth - 1:
                            positives[depth - 1].add(t.relation)
                            prev.add(u)
                layer = prev
        all_pos = set().union(*positives)
        pool = sorted(
            {r for e, d in dist.items() if d < d_max for r in g.outgoing_relations(e)}
            - all_pos
        )
        n_take = min(n_negatives, len(pool))
        negatives = (
            tuple(sorted(int(r) for r in rng.choice(pool, size=n_take, replace=False)))
            if n_take
            else ()
        )
        examples.append(
            RetrievalExample(
                question=s.question,
                positives=tuple(frozenset(p) for p in positives),
                negatives=negatives,
            )
        )
    return examples, skipped


def candidate_input(
    question: str,
    candidates: Sequence[int],
    g: KnowledgeGraph,
    vocab: Vocabulary,
    params: ModelParameters,
) -> InputSequence:
    """Question plus candidate relations as mutually isolated graph tokens."""
    serialized = SerializedSubgraph(
        tokens=tuple(NodeToken(RELATION, int(r)) for r in candidates),
        adjacency=frozenset(),
        topic_positions=(),
    )
    return build_input(question, serialized, g, vocab, params)


def score_relations(
    g: KnowledgeGraph,
    vocab: Vocabulary,
    params: ModelParameters,
    question: str,
    candidates: Iterable[int],
    adapter: str | None = "retrieval",
) -> list[RelationScore]:
    """Similarity scores for candidate relations, one scalar logit each.

    Candidates are sorted by id before encoding, so scores do not depend on
    the order the caller supplies them in.  Sets too large for one input are
    scored in id-rank chunks, which keeps chunk boundaries deterministic too.
    Returned sorted by relation id.
    """
    cand = sorted({int(r) for r in candidates})
    if not cand:
        return []
    n_q = len(split_text(question))
    room = params.config.max_len - n_q
    if room < 1:
        raise ValueError("question fills the whole input; no room to score candidates")
    w = params["head.w"]
    b = float(params["head.b"])
    out: list[RelationScore] = []
    for start in range(0, len(cand), room):
        chunk = cand[start : start + room]
        inp = candidate_input(question, chunk, g, vocab, params)
        h = forward(params, inp, mode="eval", adapter=adapter)
        logits = h[n_q : n_q + len(chunk)] @ w + b
        out.extend(RelationScore(r, float(v)) for r, v in zip(chunk, logits))
    return out


def top_k_relations(scores: Sequence[RelationScore], k: int) -> list[int]:
    """The k best relations, score descending, ties by ascending relation id."""
    ranked = sorted(scores, key=lambda s: (-s.score, s.relation))
    return [s.relation for s in ranked[:k]]


def retrieve_subgraph(
    g: KnowledgeGraph,
    vocab: Vocabulary,
    params: ModelParameters,
    question: str,
    topics: Sequence[int],
    cfg: RetrievalConfig | None = None,
    adapter: str | None = "retrieval",
) -> Subgraph:
    """Iterative top-k expansion from the topics.

    Per hop: score the frontier's distinct incident relations, keep the top k,
    and add every frontier-incident triple bearing a kept relation, in triple
    index order.  A triple whose new endpoints would push the entity count
    past `entity_cap` is skipped; the next frontier is the entities first
    reached this hop.  Topics without any incident relations yield a
    topic-only subgraph.
    """
    if cfg is None:
        cfg = RetrievalConfig()
    topics = tuple(int(t) for t in topics)
    for e in topics:
        g.entity_label(e)  # validates the id
    entities: set[int] = set(topics)
    frontier: set[int] = set(topics)
    chosen: list[Triple] = []
    chosen_idx: set[int] = set()
    for _hop in range(cfg.max_hops):
        if not frontier or len(entities) >= cfg.entity_cap:
            break
        candidates = sorted({r for e in frontier for r in g.outgoing_relations(e)})
        if not candidates:
            break
        scores = score_relations(g, vocab, params, question, candidates, adapter=adapter)
        kept = set(top_k_relations(scores, cfg.k))
        incident = sorted({i for e in frontier for i in g.incident_indices(e)})
        new_frontier: set[int] = set()
        for i in incident:
            if i in chosen_idx:
                continue
            t = g.triples[i]
            if t.relation not in kept:
                continue
            new_ents = {t.head, t.tail} - entities
            if len(entities) + len(new_ents) > cfg.entity_cap:
                continue
            chosen_idx.add(i)
            chosen.append(t)
            entities.update(new_ents)
            new_frontier.update(new_ents)
        frontier = new_frontier
    return Subgraph(topics=topics, triples=tuple(chosen))


def answer_recall(pairs: Iterable[tuple[QASample, Subgraph]]) -> float:
    """Fraction of samples with at least one gold answer inside the subgraph."""
    hit = total = 0
    for sample, sg in pairs:
        total += 1
        if sample.answers & sg.entities():
            hit += 1
    if total == 0:
        raise ValueError("no samples to measure recall over")
    return hit / total
