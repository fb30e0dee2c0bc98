"""Subgraph serialization.

A question's evidence subgraph becomes a flat token sequence by breadth-first
traversal from the topic entities, with every entity and relation emitted
once, at its first visit.  Alongside the tokens we keep a symmetric adjacency
relation over token positions: two positions are adjacent iff their nodes
co-occur in at least one triple, i.e. every triple contributes a 3-clique
{head, relation, tail}.  The attention mask is built from exactly this
adjacency, so what is serialized here fixes what the encoder may look at.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple

from .kg import KnowledgeGraph, Triple

ENTITY = "entity"
RELATION = "relation"


class NodeToken(NamedTuple):
    kind: str  # ENTITY or RELATION
    id: int


@dataclass(frozen=True)
class Subgraph:
    """Topic entities plus the triples retrieved for one question.

    The induced entity set is the triple endpoints plus the topics, so a
    topic with zero triples is representable (degenerate but legal).
    """

    topics: tuple[int, ...]
    triples: tuple[Triple, ...]

    def __post_init__(self):
        object.__setattr__(self, "topics", tuple(self.topics))
        object.__setattr__(self, "triples", tuple(Triple(*t) for t in self.triples))

    def entities(self) -> set[int]:
        out = set(self.topics)
        for t in self.triples:
            out.add(t.head)
            out.add(t.tail)
        return out


@dataclass(frozen=True)
class SerializedSubgraph:
    """Token sequence + position adjacency produced by `serialize_subgraph`.

    `adjacency` stores each unordered pair once as (i, j) with i < j; the
    relation is symmetric and irreflexive by construction.
    `has_unreachable` warns that some triples were not reachable from any
    topic and were appended after the reachable ones in triple-list order.
    """

    tokens: tuple[NodeToken, ...]
    adjacency: frozenset[tuple[int, int]]
    topic_positions: tuple[int, ...]
    has_unreachable: bool = False

    def __len__(self) -> int:
        return len(self.tokens)

    def adjacent(self, i: int, j: int) -> bool:
        if i > j:
            i, j = j, i
        return (i, j) in self.adjacency

    def entity_positions(self) -> list[int]:
        """Positions (within the graph segment) holding entity tokens."""
        return [p for p, tok in enumerate(self.tokens) if tok.kind == ENTITY]

    def dump(self, g: KnowledgeGraph) -> str:
        """Debug dump: `pos<TAB>kind<TAB>label` per token, then sorted adjacency pairs."""
        lines = []
        for p, tok in enumerate(self.tokens):
            label = (
                g.entity_label(tok.id) if tok.kind == ENTITY else g.relation_label(tok.id)
            )
            lines.append(f"{p}\t{tok.kind}\t{label}")
        for i, j in sorted(self.adjacency):
            lines.append(f"{i}\t{j}")
        return "\n".join(lines) + "\n"


def serialize_subgraph(sg: Subgraph) -> SerializedSubgraph:
    """Breadth-first serialization from the topic entities.

    Hop d visits every not-yet-visited triple incident to an entity first
    reached at hop d-1 (hop 0 entities are the topics), in subgraph
    triple-list order within a hop.  Tokens are appended at first visit only,
    topics first, so `tokens[0]` is the first topic entity even when the
    first triple points at it.  Triples unreachable from every topic are
    appended afterwards in list order and flagged.
    """
    if not sg.topics:
        raise ValueError("subgraph has no topic entities; nothing to serialize from")

    positions: dict[NodeToken, int] = {}
    tokens: list[NodeToken] = []

    def emit(tok: NodeToken) -> int:
        pos = positions.get(tok)
        if pos is None:
            pos = len(tokens)
            positions[tok] = pos
            tokens.append(tok)
        return pos

    ordered_topics: list[int] = []
    for t in sg.topics:
        if t not in ordered_topics:
            ordered_topics.append(t)
    for t in ordered_topics:
        emit(NodeToken(ENTITY, t))
    topic_positions = tuple(positions[NodeToken(ENTITY, t)] for t in ordered_topics)

    adjacency: set[tuple[int, int]] = set()

    def visit(triple: Triple) -> None:
        ph = emit(NodeToken(ENTITY, triple.head))
        pr = emit(NodeToken(RELATION, triple.relation))
        pt = emit(NodeToken(ENTITY, triple.tail))
        for a, b in combinations((ph, pr, pt), 2):
            if a == b:
                continue  # self-loop: head and tail share a position
            adjacency.add((a, b) if a < b else (b, a))

    visited = [False] * len(sg.triples)
    reached = set(ordered_topics)
    frontier = set(ordered_topics)
    while frontier:
        hop = [
            i
            for i, t in enumerate(sg.triples)
            if not visited[i] and (t.head in frontier or t.tail in frontier)
        ]
        if not hop:
            break
        new_entities: set[int] = set()
        for i in hop:
            visited[i] = True
            visit(sg.triples[i])
            for e in (sg.triples[i].head, sg.triples[i].tail):
                if e not in reached:
                    reached.add(e)
                    new_entities.add(e)
        frontier = new_entities

    leftovers = [i for i, v in enumerate(visited) if not v]
    for i in leftovers:
        visit(sg.triples[i])

    return SerializedSubgraph(
        tokens=tuple(tokens),
        adjacency=frozenset(adjacency),
        topic_positions=topic_positions,
        has_unreachable=bool(leftovers),
    )


def truncate(s: SerializedSubgraph, budget: int) -> SerializedSubgraph:
    """Keep the longest token prefix of size <= budget, dropping dangling pairs.

    Position 0 (the first topic) always survives because budget >= 1.
    """
    if budget < 1:
        raise ValueError(f"token budget must be >= 1, got {budget}")
    if len(s.tokens) <= budget:
        return s
    return SerializedSubgraph(
        tokens=s.tokens[:budget],
        adjacency=frozenset(p for p in s.adjacency if p[1] < budget),
        topic_positions=tuple(p for p in s.topic_positions if p < budget),
        has_unreachable=s.has_unreachable,
    )
