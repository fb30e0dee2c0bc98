import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgqa import (
    ENTITY,
    RELATION,
    NodeToken,
    Subgraph,
    serialize_subgraph,
    truncate,
)
from kgqa.kg import Triple

from oracles import bfs_serialize

# Positions for the tiny fixture, worked by hand: BFS from A visits
# (A r B) and (A s D) in wave 1, then (B s C) in wave 2, where s is
# already placed.  Tokens: A r B s D C.
TINY_TOKENS = (
    NodeToken(ENTITY, 0),  # A
    NodeToken(RELATION, 0),  # r
    NodeToken(ENTITY, 1),  # B
    NodeToken(RELATION, 1),  # s
    NodeToken(ENTITY, 3),  # D
    NodeToken(ENTITY, 2),  # C
)
TINY_ADJACENCY = frozenset(
    [(0, 1), (0, 2), (1, 2), (0, 3), (0, 4), (3, 4), (2, 3), (2, 5), (3, 5)]
)


def test_tiny_fixture_tokens_and_cliques(tiny_subgraph):
    s = serialize_subgraph(tiny_subgraph)
    assert s.tokens == TINY_TOKENS
    assert s.adjacency == TINY_ADJACENCY
    assert s.topic_positions == (0,)
    assert not s.has_unreachable
    assert s.entity_positions() == [0, 2, 4, 5]


def test_single_triple():
    s = serialize_subgraph(Subgraph(topics=(0,), triples=(Triple(0, 0, 1),)))
    assert s.tokens == (
        NodeToken(ENTITY, 0),
        NodeToken(RELATION, 0),
        NodeToken(ENTITY, 1),
    )
    assert s.adjacency == frozenset([(0, 1), (0, 2), (1, 2)])


def test_topic_only_subgraph():
    s = serialize_subgraph(Subgraph(topics=(2,), triples=()))
    assert s.tokens == (NodeToken(ENTITY, 2),)
    assert s.adjacency == frozenset()
    assert s.topic_positions == (0,)


def test_topics_precede_triple_tokens():
    sg = Subgraph(topics=(3, 1), triples=(Triple(0, 0, 1), Triple(1, 1, 2), Triple(0, 1, 3)))
    s = serialize_subgraph(sg)
    kinds_ids = [(t.kind, t.id) for t in s.tokens]
    assert kinds_ids == [
        (ENTITY, 3),
        (ENTITY, 1),
        (ENTITY, 0),
        (RELATION, 0),
        (RELATION, 1),
        (ENTITY, 2),
    ]
    assert s.topic_positions == (0, 1)


def test_duplicate_topics_collapse():
    s = serialize_subgraph(Subgraph(topics=(1, 1), triples=(Triple(0, 0, 1),)))
    assert s.topic_positions == (0,)
    assert s.tokens[0] == NodeToken(ENTITY, 1)


def test_unreachable_triples_appended_and_flagged():
    # topic C touches nothing; both triples are leftovers in list order
    sg = Subgraph(topics=(2,), triples=(Triple(0, 0, 1), Triple(0, 1, 3)))
    s = serialize_subgraph(sg)
    assert s.has_unreachable
    assert [t.id for t in s.tokens if t.kind == ENTITY] == [2, 0, 1, 3]


def test_self_loop_gets_no_self_pair():
    s = serialize_subgraph(Subgraph(topics=(0,), triples=(Triple(0, 0, 0),)))
    assert s.tokens == (NodeToken(ENTITY, 0), NodeToken(RELATION, 0))
    assert s.adjacency == frozenset([(0, 1)])


def test_no_topics_rejected():
    with pytest.raises(ValueError):
        serialize_subgraph(Subgraph(topics=(), triples=(Triple(0, 0, 1),)))


def test_truncate_budgets(tiny_subgraph):
    s = serialize_subgraph(tiny_subgraph)
    assert truncate(s, 6) is s
    cut = truncate(s, 3)
    assert cut.tokens == TINY_TOKENS[:3]
    assert cut.adjacency == frozenset([(0, 1), (0, 2), (1, 2)])
    solo = truncate(s, 1)
    assert solo.tokens == (NodeToken(ENTITY, 0),)
    assert solo.adjacency == frozenset()
    assert solo.topic_positions == (0,)
    with pytest.raises(ValueError):
        truncate(s, 0)


def test_dump_golden(tiny_graph):
    s = serialize_subgraph(Subgraph(topics=(0,), triples=(Triple(0, 0, 1),)))
    assert s.dump(tiny_graph) == ("0\tentity\tA\n1\trelation\tr\n2\tentity\tB\n0\t1\n0\t2\n1\t2\n")


def test_determinism(tiny_subgraph):
    a = serialize_subgraph(tiny_subgraph)
    b = serialize_subgraph(tiny_subgraph)
    assert a == b


@st.composite
def subgraph_inputs(draw):
    n_e = draw(st.integers(min_value=2, max_value=6))
    n_r = draw(st.integers(min_value=1, max_value=3))
    triple = st.tuples(
        st.integers(0, n_e - 1), st.integers(0, n_r - 1), st.integers(0, n_e - 1)
    )
    triples = draw(st.lists(triple, min_size=1, max_size=8))
    topics = draw(st.lists(st.integers(0, n_e - 1), min_size=1, max_size=3))
    return topics, triples


@settings(max_examples=200, deadline=None)
@given(subgraph_inputs())
def test_matches_reference_bfs(inputs):
    topics, triples = inputs
    s = serialize_subgraph(Subgraph(topics=tuple(topics), triples=tuple(triples)))
    ref_tokens, ref_adj, ref_topic_pos, ref_unreachable = bfs_serialize(topics, triples)
    assert list(s.tokens) == ref_tokens
    assert set(s.adjacency) == ref_adj
    assert list(s.topic_positions) == ref_topic_pos
    assert s.has_unreachable == ref_unreachable


@settings(max_examples=200, deadline=None)
@given(subgraph_inputs())
def test_structural_invariants(inputs):
    topics, triples = inputs
    s = serialize_subgraph(Subgraph(topics=tuple(topics), triples=tuple(triples)))
    # each node appears exactly once
    assert len(set(s.tokens)) == len(s.tokens)
    # adjacency pairs are ordered, irreflexive, in range
    for i, j in s.adjacency:
        assert 0 <= i < j < len(s.tokens)
    # distinct topics occupy the leading positions in given order
    assert s.topic_positions == tuple(range(len(s.topic_positions)))
    # token set is exactly the subgraph's nodes
    ents = {t.id for t in s.tokens if t.kind == ENTITY}
    rels = {t.id for t in s.tokens if t.kind == RELATION}
    sg_ents = set(topics) | {e for h, _r, t in triples for e in (h, t)}
    assert ents == sg_ents
    assert rels == {r for _h, r, _t in triples}


@settings(max_examples=100, deadline=None)
@given(subgraph_inputs(), st.integers(min_value=1, max_value=12))
def test_truncate_is_a_prefix(inputs, budget):
    topics, triples = inputs
    s = serialize_subgraph(Subgraph(topics=tuple(topics), triples=tuple(triples)))
    cut = truncate(s, budget)
    assert cut.tokens == s.tokens[:budget]
    assert cut.adjacency <= s.adjacency
    assert all(j < budget for _i, j in cut.adjacency)
    assert all(p < budget for p in cut.topic_positions)
