import numpy as np
import pytest

from kgqa import (
    ENTITY,
    PAD_ID,
    UNK_ID,
    KnowledgeGraph,
    Subgraph,
    Vocabulary,
    build_input,
    embed_node,
    embed_positions,
    node_rows,
    serialize_subgraph,
    split_text,
)

from conftest import small_params

# tiny_vocab interning order, worked by hand from the fixture corpus
TINY_VOCAB_TOKENS = [
    "<pad>", "<unk>", "a", "b", "c", "d", "r", "s",
    "what", "is", "the", "of", "?", "who",
]


def test_split_text_words_and_punctuation():
    assert split_text("Who founded New-York?") == ["who", "founded", "new", "-", "york", "?"]
    assert split_text("X's name") == ["x", "'", "s", "name"]
    assert split_text("") == []
    assert split_text("   ") == []


def test_vocabulary_interning_order(tiny_vocab):
    assert tiny_vocab.tokens == TINY_VOCAB_TOKENS
    assert tiny_vocab.id("<pad>") == PAD_ID == 0
    assert tiny_vocab.id("<unk>") == UNK_ID == 1


def test_encode_frozen_question(tiny_vocab):
    assert tiny_vocab.encode("who is the r of A?") == [13, 9, 10, 6, 11, 2, 12]
    assert tiny_vocab.encode("") == []


def test_unknown_tokens_map_to_unk(tiny_vocab):
    assert tiny_vocab.id("zebra") == UNK_ID
    assert tiny_vocab.encode("who zebra") == [13, UNK_ID]


def test_vocabulary_requires_reserved_prefix():
    with pytest.raises(ValueError):
        Vocabulary(["a", "b"])
    with pytest.raises(ValueError):
        Vocabulary(["<pad>", "<unk>", "a", "a"])


def test_vocabulary_round_trip_and_hash(tmp_path, tiny_vocab):
    path = tmp_path / "vocab.txt"
    tiny_vocab.save(path)
    loaded = Vocabulary.load(path)
    assert loaded.tokens == tiny_vocab.tokens
    assert loaded.content_hash() == tiny_vocab.content_hash()
    other = Vocabulary(tiny_vocab.tokens + ["extra"])
    assert other.content_hash() != tiny_vocab.content_hash()


def test_multi_word_label_sums_subword_rows():
    g = KnowledgeGraph.from_label_triples([("new york", "in", "usa")])
    vocab = Vocabulary.build(g.entity_labels + g.relation_labels)
    assert vocab.tokens == ["<pad>", "<unk>", "new", "york", "usa", "in"]
    table = np.arange(12, dtype=np.float64).reshape(6, 2)
    vec = embed_node(ENTITY, g.entity_id("new york"), g, vocab, table)
    assert np.array_equal(vec, table[2] + table[3])


def test_blank_label_falls_back_to_unk():
    g = KnowledgeGraph.from_label_triples([(" ", "r", "B")])
    vocab = Vocabulary.build(["r", "B"])
    assert node_rows(g, vocab, ENTITY, g.entity_id(" ")) == [UNK_ID]


def test_build_input_layout(tiny_graph, tiny_subgraph, tiny_vocab):
    params = small_params(len(tiny_vocab))
    inp = build_input("A?", serialize_subgraph(tiny_subgraph), tiny_graph, tiny_vocab, params)
    assert inp.question_ids == [2, 12]
    assert inp.n_q == 2
    assert inp.length == 2 + 6
    # graph tokens A r B s D C -> entities at graph offsets 0, 2, 4, 5
    assert inp.entity_positions.tolist() == [2, 4, 6, 7]
    assert inp.entity_ids.tolist() == [0, 1, 3, 2]
    assert inp.topic_positions == (2,)
    assert inp.mask.matrix.shape == (8, 8)
    assert inp.n_e.shape == (8, params.config.d)


def test_build_input_embedding_plan_matches_matrix(tiny_graph, tiny_subgraph, tiny_vocab):
    params = small_params(len(tiny_vocab))
    inp = build_input("A?", serialize_subgraph(tiny_subgraph), tiny_graph, tiny_vocab, params)
    table = params["embed"]
    pos = embed_positions(params, inp.n_q, len(inp.graph.tokens))
    for p, rows in enumerate(inp.token_rows):
        assert np.array_equal(inp.n_e[p], table[rows].sum(axis=0) + pos[p])
    # question rows are single ids, graph rows follow
    assert inp.token_rows[: inp.n_q] == [[2], [12]]
    assert len(inp.token_rows) == inp.length


def test_build_input_truncates_to_max_len(tiny_graph, tiny_subgraph, tiny_vocab):
    params = small_params(len(tiny_vocab))
    inp = build_input(
        "A?", serialize_subgraph(tiny_subgraph), tiny_graph, tiny_vocab, params, max_len=5
    )
    assert inp.length == 5
    assert len(inp.graph.tokens) == 3  # A r B survive the budget
    assert inp.entity_positions.tolist() == [2, 4]
    assert inp.entity_ids.tolist() == [0, 1]


def test_build_input_rejects_empty_question(tiny_graph, tiny_subgraph, tiny_vocab):
    params = small_params(len(tiny_vocab))
    with pytest.raises(ValueError, match="no tokens"):
        build_input("", serialize_subgraph(tiny_subgraph), tiny_graph, tiny_vocab, params)


def test_build_input_rejects_question_filling_max_len(tiny_graph, tiny_subgraph, tiny_vocab):
    params = small_params(len(tiny_vocab))
    with pytest.raises(ValueError, match="no room"):
        build_input(
            "who is the r of A?",
            serialize_subgraph(tiny_subgraph),
            tiny_graph,
            tiny_vocab,
            params,
            max_len=7,
        )


def test_structural_flag_reaches_mask(tiny_graph, tiny_subgraph, tiny_vocab):
    params = small_params(len(tiny_vocab))
    ser = serialize_subgraph(tiny_subgraph)
    open_inp = build_input("A?", ser, tiny_graph, tiny_vocab, params, structural_mask=False)
    gg = open_inp.mask.matrix[open_inp.n_q :, open_inp.n_q :]
    assert (gg == 0.0).all()


def test_separate_graph_position_table(tiny_vocab):
    params = small_params(len(tiny_vocab), separate_graph_positions=True)
    rows = embed_positions(params, n_q=3, graph_len=4)
    assert np.array_equal(rows[:3], params["pos"][:3])
    assert np.array_equal(rows[3:], params["pos_graph"][:4])


def test_shared_position_table_is_one_sequence(tiny_vocab):
    params = small_params(len(tiny_vocab))
    rows = embed_positions(params, n_q=3, graph_len=4)
    assert np.array_equal(rows, params["pos"][:7])


def test_entity_rows_use_entity_table_not_question(tiny_graph, tiny_subgraph, tiny_vocab):
    """Shared subwords: entity 'a' and question word 'a' hit the same row."""
    params = small_params(len(tiny_vocab))
    inp = build_input("A?", serialize_subgraph(tiny_subgraph), tiny_graph, tiny_vocab, params)
    assert inp.token_rows[0] == [2]  # question word "a"
    assert inp.token_rows[inp.n_q] == [2]  # topic entity "A"
