import pytest

from kgqa import GraphFormatError, KnowledgeGraph, Triple, load_graph, write_graph


def test_interning_order_and_ids(tiny_graph):
    assert tiny_graph.n_entities == 4
    assert tiny_graph.n_relations == 2
    # first-appearance interning over (head, relation, tail) per row
    assert [tiny_graph.entity_label(i) for i in range(4)] == ["A", "B", "C", "D"]
    assert [tiny_graph.relation_label(i) for i in range(2)] == ["r", "s"]
    assert tiny_graph.entity_id("D") == 3
    assert tiny_graph.triples == [Triple(0, 0, 1), Triple(1, 1, 2), Triple(0, 1, 3)]


def test_unknown_lookups_raise(tiny_graph):
    with pytest.raises(KeyError):
        tiny_graph.entity_id("nope")
    with pytest.raises(ValueError):
        tiny_graph.entity_label(99)
    with pytest.raises(ValueError):
        tiny_graph.relation_label(-1)


def test_neighborhood_is_bidirectional_in_triple_order(tiny_graph):
    b = tiny_graph.entity_id("B")
    hood = tiny_graph.neighborhood(b)
    assert hood == [Triple(0, 0, 1), Triple(1, 1, 2)]
    assert tiny_graph.degree(b) == 2
    assert tiny_graph.outgoing_relations(b) == {0, 1}


def test_every_triple_counted_twice_in_adjacency(tiny_graph):
    total = sum(tiny_graph.degree(e) for e in range(tiny_graph.n_entities))
    assert total == 2 * len(tiny_graph.triples)


def test_self_loop_counted_once_per_endpoint_role():
    g = KnowledgeGraph.from_label_triples([("A", "r", "A"), ("A", "s", "B")])
    a = g.entity_id("A")
    assert g.degree(a) == 3  # loop twice + one ordinary edge
    total = sum(g.degree(e) for e in range(g.n_entities))
    assert total == 2 * len(g.triples)


def test_duplicate_triples_collapse():
    g = KnowledgeGraph.from_label_triples([("A", "r", "B"), ("A", "r", "B")])
    assert len(g.triples) == 1


def test_isolated_entity_via_companion_order():
    g = KnowledgeGraph.from_label_triples(
        [("A", "r", "B")], entity_order=["A", "B", "lonely"], relation_order=["r"]
    )
    assert g.n_entities == 3
    assert g.degree(g.entity_id("lonely")) == 0
    assert g.neighborhood(g.entity_id("lonely")) == []


def test_tsv_round_trip(tmp_path, tiny_graph):
    path = tmp_path / "graph.tsv"
    write_graph(tiny_graph, path, companions=True)
    loaded = load_graph(path)
    assert loaded.triples == tiny_graph.triples
    assert list(loaded.entity_labels) == list(tiny_graph.entity_labels)
    assert (tmp_path / "entities.txt").exists()
    assert (tmp_path / "relations.txt").exists()


def test_malformed_rows_name_file_and_line(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("A\tr\tB\nA\tr\n", encoding="utf-8")
    with pytest.raises(GraphFormatError, match=r"bad\.tsv:2"):
        load_graph(path)


def test_empty_graph_rejected(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("\n\n", encoding="utf-8")
    with pytest.raises(GraphFormatError):
        load_graph(path)


def test_blank_lines_skipped(tmp_path):
    path = tmp_path / "gaps.tsv"
    path.write_text("A\tr\tB\n\nB\ts\tC\n", encoding="utf-8")
    g = load_graph(path)
    assert len(g.triples) == 2
