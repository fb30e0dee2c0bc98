"""Knowledge graph storage: interned labels, a triple list, and a bidirectional adjacency index."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, NamedTuple, Sequence


class GraphFormatError(ValueError):
    """Malformed triple file: bad field count, empty file, duplicate labels."""


class Triple(NamedTuple):
    """One (head, relation, tail) fact; every field is a dense integer id."""

    head: int
    relation: int
    tail: int


class KnowledgeGraph:
    """Immutable triple store.

    Entity and relation ids are contiguous integers assigned in
    first-appearance order (optionally pinned by companion label files, see
    `load_graph`).  The adjacency index records, per entity, the indices of
    incident triples in triple-list order.  A triple is incident to both its
    head and its tail; a self-loop is indexed once per endpoint role, so the
    multiset union of all neighborhood lists counts every triple exactly
    twice.  Instances never mutate after construction, so concurrent readers
    need no locking.
    """

    def __init__(
        self,
        entity_labels: Sequence[str],
        relation_labels: Sequence[str],
        triples: Iterable[Triple],
    ):
        self._entity_labels = list(entity_labels)
        self._relation_labels = list(relation_labels)
        if not self._entity_labels:
            raise GraphFormatError("graph needs at least one entity")
        self._entity_ids = {lab: i for i, lab in enumerate(self._entity_labels)}
        self._relation_ids = {lab: i for i, lab in enumerate(self._relation_labels)}
        if len(self._entity_ids) != len(self._entity_labels):
            raise GraphFormatError("duplicate entity labels")
        if len(self._relation_ids) != len(self._relation_labels):
            raise GraphFormatError("duplicate relation labels")

        self.triples: list[Triple] = []
        self._adjacency: list[list[int]] = [[] for _ in self._entity_labels]
        seen: set[Triple] = set()
        for raw in triples:
            t = Triple(*raw)
            if not (0 <= t.head < len(self._entity_labels)) or not (
                0 <= t.tail < len(self._entity_labels)
            ):
                raise GraphFormatError(f"triple {t} has an out-of-range entity id")
            if not 0 <= t.relation < len(self._relation_labels):
                raise GraphFormatError(f"triple {t} has an out-of-range relation id")
            if t in seen:
                continue  # exact duplicates collapse to one triple
            seen.add(t)
            idx = len(self.triples)
            self.triples.append(t)
            self._adjacency[t.head].append(idx)
            self._adjacency[t.tail].append(idx)

    # -- symbol tables -------------------------------------------------

    @property
    def n_entities(self) -> int:
        return len(self._entity_labels)

    @property
    def n_relations(self) -> int:
        return len(self._relation_labels)

    def entity_label(self, e: int) -> str:
        self._check_entity(e)
        return self._entity_labels[e]

    def relation_label(self, r: int) -> str:
        if not 0 <= r < len(self._relation_labels):
            raise ValueError(f"unknown relation id {r}")
        return self._relation_labels[r]

    def entity_id(self, label: str) -> int:
        return self._entity_ids[label]

    def relation_id(self, label: str) -> int:
        return self._relation_ids[label]

    @property
    def entity_labels(self) -> list[str]:
        return list(self._entity_labels)

    @property
    def relation_labels(self) -> list[str]:
        return list(self._relation_labels)

    # -- adjacency -----------------------------------------------------

    def _check_entity(self, e: int) -> None:
        if not 0 <= e < len(self._entity_labels):
            raise ValueError(f"unknown entity id {e}")

    def incident_indices(self, e: int) -> tuple[int, ...]:
        """Indices into `triples` of the triples incident to `e`, triple-list order."""
        self._check_entity(e)
        return tuple(self._adjacency[e])

    def neighborhood(self, e: int) -> list[Triple]:
        """Every triple with `e` as head or tail, in triple-list order.

        Covers both directions so breadth-first traversal and frontier
        expansion can walk against edge direction.
        """
        self._check_entity(e)
        return [self.triples[i] for i in self._adjacency[e]]

    def outgoing_relations(self, e: int) -> set[int]:
        """Distinct relation ids on triples incident to `e`."""
        self._check_entity(e)
        return {self.triples[i].relation for i in self._adjacency[e]}

    def degree(self, e: int) -> int:
        self._check_entity(e)
        return len(self._adjacency[e])

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return (
            f"KnowledgeGraph({self.n_entities} entities, "
            f"{self.n_relations} relations, {len(self.triples)} triples)"
        )

    # -- construction --------------------------------------------------

    @classmethod
    def from_label_triples(
        cls,
        rows: Iterable[tuple[str, str, str]],
        entity_order: Sequence[str] | None = None,
        relation_order: Sequence[str] | None = None,
    ) -> "KnowledgeGraph":
        """Intern labels (head, then relation, then tail per row) and build the graph.

        `entity_order` / `relation_order` pre-intern labels so ids stay
        stable across re-exports; labels not listed are appended in
        first-appearance order.
        """
        ents: dict[str, int] = {}
        rels: dict[str, int] = {}
        for lab in entity_order or ():
            if lab in ents:
                raise GraphFormatError(f"duplicate entity label {lab!r} in id-order file")
            ents[lab] = len(ents)
        for lab in relation_order or ():
            if lab in rels:
                raise GraphFormatError(f"duplicate relation label {lab!r} in id-order file")
            rels[lab] = len(rels)

        id_triples = []
        for h, r, t in rows:
            hi = ents.setdefault(h, len(ents))
            ri = rels.setdefault(r, len(rels))
            ti = ents.setdefault(t, len(ents))
            id_triples.append(Triple(hi, ri, ti))
        return cls(list(ents), list(rels), id_triples)


def _read_label_file(path: Path) -> list[str]:
    return [line for line in path.read_text(encoding="utf-8").split("\n") if line != ""]


def load_graph(
    path: str | Path,
    entities_path: str | Path | None = None,
    relations_path: str | Path | None = None,
) -> KnowledgeGraph:
    """Load a UTF-8 TSV triple file, one `head<TAB>relation<TAB>tail` per line.

    Labels may contain spaces but not tabs.  Blank lines are skipped; a line
    with the wrong field count raises `GraphFormatError` naming the line
    number, and a file with no triples raises as well.  Companion files
    `entities.txt` / `relations.txt` next to the triple file (or passed
    explicitly) pin id order for checkpoint compatibility.
    """
    path = Path(path)
    if entities_path is None:
        sibling = path.parent / "entities.txt"
        entities_path = sibling if sibling.exists() else None
    if relations_path is None:
        sibling = path.parent / "relations.txt"
        relations_path = sibling if sibling.exists() else None

    rows: list[tuple[str, str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise GraphFormatError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            rows.append((fields[0], fields[1], fields[2]))
    if not rows:
        raise GraphFormatError(f"{path}: no triples (empty file?)")

    entity_order = _read_label_file(Path(entities_path)) if entities_path else None
    relation_order = _read_label_file(Path(relations_path)) if relations_path else None
    return KnowledgeGraph.from_label_triples(rows, entity_order, relation_order)


def write_graph(g: KnowledgeGraph, path: str | Path, companions: bool = False) -> None:
    """Write the triple list as TSV; optionally emit id-order companion files."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for t in g.triples:
            fh.write(
                f"{g.entity_label(t.head)}\t{g.relation_label(t.relation)}\t{g.entity_label(t.tail)}\n"
            )
    if companions:
        (path.parent / "entities.txt").write_text(
            "".join(lab + "\n" for lab in g.entity_labels), encoding="utf-8"
        )
        (path.parent / "relations.txt").write_text(
            "".join(lab + "\n" for lab in g.relation_labels), encoding="utf-8"
        )
