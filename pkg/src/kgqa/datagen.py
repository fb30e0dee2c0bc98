"""Synthetic tuning data.

Samples are built path-first: a random bidirectional walk from a topic entity
fixes the reasoning path, a connectivity-preserving random expansion pads the
subgraph to the entity budget, and a hop-matched template turns the path's
relation sequence into a question.  The answer set is the closure of the
relation sequence inside the emitted subgraph (the walked end entity is
always a member), which keeps the task well-posed when parallel relation
edges occur.  Generation is deterministic given the seed and embarrassingly
parallel across samples: sample i uses the rng seeded with (seed, i), so the
output never depends on worker count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .kg import KnowledgeGraph, Triple
from .serialize import Subgraph


class DatasetError(ValueError):
    """Malformed dataset records or unsatisfiable generation requests."""


@dataclass(frozen=True)
class QuestionTemplate:
    """Surface pattern with `{e0}` and exactly `{r1}`..`{r<hops>}` placeholders."""

    hops: int
    pattern: str

    def __post_init__(self):
        if self.hops < 1:
            raise ValueError("template hop count must be >= 1")
        if "{e0}" not in self.pattern:
            raise ValueError(f"template missing {{e0}}: {self.pattern!r}")
        for i in range(1, self.hops + 1):
            if f"{{r{i}}}" not in self.pattern:
                raise ValueError(f"{self.hops}-hop template missing {{r{i}}}: {self.pattern!r}")
        if f"{{r{self.hops + 1}}}" in self.pattern:
            raise ValueError(f"template has too many relation slots: {self.pattern!r}")


DEFAULT_TEMPLATES = (
    QuestionTemplate(1, "who is the {r1} of {e0}?"),
    QuestionTemplate(1, "what is the {r1} of {e0}?"),
    QuestionTemplate(2, "what is the {r2} of the {r1} of {e0}?"),
    QuestionTemplate(2, "who is the {r2} of the {r1} of {e0}?"),
    QuestionTemplate(3, "what is the {r3} of the {r2} of the {r1} of {e0}?"),
    QuestionTemplate(4, "what is the {r4} of the {r3} of the {r2} of the {r1} of {e0}?"),
)


@dataclass(frozen=True)
class ReasoningPath:
    """A walk: start entity, then (relation, entity) steps; hops = len(steps).

    `truncated` flags a walk cut short at a dead end (no move available that
    does not immediately backtrack).  `triples` are the KG triples realized by
    the steps, in step order, as stored in the graph (direction preserved).
    """

    start: int
    steps: tuple[tuple[int, int], ...]
    triples: tuple[Triple, ...]
    truncated: bool = False

    @property
    def hops(self) -> int:
        return len(self.steps)

    def entities(self) -> list[int]:
        return [self.start] + [e for _, e in self.steps]

    def relations(self) -> list[int]:
        return [r for r, _ in self.steps]


@dataclass(frozen=True)
class QASample:
    """One question with its evidence subgraph, gold answers, and split tag."""

    question: str
    topics: tuple[int, ...]
    subgraph: Subgraph
    answers: frozenset[int]
    path: ReasoningPath | None
    split: str
    sample_id: int = -1

    def validate(self) -> None:
        """Structural checks.  Answer membership in the subgraph is only
        required for path-backed (generated) samples; retrieved subgraphs may
        legitimately miss answers, which evaluation counts against recall."""
        if not self.answers:
            raise DatasetError("sample has no answers")
        ents = self.subgraph.entities()
        if not set(self.topics) <= ents:
            raise DatasetError("topic entities missing from the subgraph")
        if self.path is not None:
            if not self.answers <= ents:
                raise DatasetError("answer entities missing from the subgraph")
            triple_set = set(self.subgraph.triples)
            if not set(self.path.triples) <= triple_set:
                raise DatasetError("path triples missing from the subgraph")


def _other_end(t: Triple, e: int) -> int:
    return t.tail if t.head == e else t.head


def sample_path(
    g: KnowledgeGraph,
    topic: int,
    max_hops: int,
    rng: np.random.Generator,
    min_hops: int = 1,
) -> ReasoningPath:
    """Uniform-hop random walk from `topic`, both edge directions allowed.

    The walk never returns to the entity it just left (no immediate
    backtracking); when every incident triple would do so, it stops early and
    the shorter path is flagged `truncated`.
    """
    if not 1 <= min_hops <= max_hops <= 4:
        raise ValueError(f"need 1 <= min_hops <= max_hops <= 4, got [{min_hops}, {max_hops}]")
    if g.degree(topic) == 0:
        raise ValueError(f"topic entity {topic} has no incident triples")
    h = int(rng.integers(min_hops, max_hops + 1))
    steps: list[tuple[int, int]] = []
    triples: list[Triple] = []
    prev: int | None = None
    cur = topic
    truncated = False
    for _ in range(h):
        options = g.neighborhood(cur)
        if prev is not None:
            options = [t for t in options if _other_end(t, cur) != prev]
        if not options:
            truncated = True
            break
        t = options[int(rng.integers(len(options)))]
        nxt = _other_end(t, cur)
        steps.append((t.relation, nxt))
        triples.append(t)
        prev, cur = cur, nxt
    return ReasoningPath(
        start=topic, steps=tuple(steps), triples=tuple(triples), truncated=truncated
    )


def extract_subgraph(
    g: KnowledgeGraph,
    path: ReasoningPath,
    entity_budget: int,
    rng: np.random.Generator,
) -> Subgraph:
    """Path triples plus random connected expansion up to `entity_budget` entities.

    Every added triple is incident to an already-included entity, so the
    subgraph stays connected to the topic; expansion stops when the induced
    entity count reaches the budget or the neighborhood is exhausted.
    """
    path_entities = set(path.entities())
    if entity_budget < len(path_entities):
        raise ValueError(
            f"entity budget {entity_budget} below the {len(path_entities)} path entities"
        )
    chosen: list[Triple] = []
    chosen_ids: set[int] = set()
    for t in path.triples:
        i = g.triples.index(t)
        if i not in chosen_ids:
            chosen_ids.add(i)
            chosen.append(t)
    included = set(path_entities)
    while len(included) < entity_budget:
        candidates = sorted(
            {i for e in included for i in g.incident_indices(e)} - chosen_ids
        )
        if not candidates:
            break
        i = candidates[int(rng.integers(len(candidates)))]
        t = g.triples[i]
        chosen_ids.add(i)
        chosen.append(t)
        for e in (t.head, t.tail):
            included.add(e)
    return Subgraph(topics=(path.start,), triples=tuple(chosen))


def chain_answers(sg: Subgraph, topic: int, relations: Sequence[int]) -> set[int]:
    """Entities reachable from `topic` by following the relation sequence
    inside the subgraph, direction-agnostically at every step."""
    cur = {topic}
    for r in relations:
        nxt: set[int] = set()
        for t in sg.triples:
            if t.relation != r:
                continue
            if t.head in cur:
                nxt.add(t.tail)
            if t.tail in cur:
                nxt.add(t.head)
        cur = nxt
        if not cur:
            break
    return cur


def synthesize_question(
    g: KnowledgeGraph,
    path: ReasoningPath,
    templates: Sequence[QuestionTemplate],
    rng: np.random.Generator,
) -> str:
    """Fill a hop-matched template with the topic label and relation labels."""
    matching = [t for t in templates if t.hops == path.hops]
    if not matching:
        raise DatasetError(f"no template for a {path.hops}-hop path")
    tpl = matching[int(rng.integers(len(matching)))]
    values = {"e0": g.entity_label(path.start)}
    for i, r in enumerate(path.relations(), start=1):
        values[f"r{i}"] = g.relation_label(r)
    return tpl.pattern.format(**values)


@dataclass
class DatagenConfig:
    max_hops: int = 3
    min_hops: int = 1
    entity_budget: int = 12
    val_fraction: float = 0.05
    templates: tuple[QuestionTemplate, ...] = DEFAULT_TEMPLATES

    def __post_init__(self):
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


def top_degree_entities(g: KnowledgeGraph, fraction: float = 0.25) -> list[int]:
    """Ids of the top-degree quantile, ties broken by id (the topic pool default)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    order = sorted(range(g.n_entities), key=lambda e: (-g.degree(e), e))
    return order[: max(1, int(g.n_entities * fraction))]


@dataclass
class GenStats:
    n_samples: int
    n_train: int
    n_validation: int
    skipped_topics: int
    hop_counts: dict[int, int]


def sample_to_record(g: KnowledgeGraph, s: QASample) -> dict:
    path_labels: list[str] | None = None
    if s.path is not None:
        path_labels = [g.entity_label(s.path.start)]
        for r, e in s.path.steps:
            path_labels.append(g.relation_label(r))
            path_labels.append(g.entity_label(e))
    return {
        "id": s.sample_id,
        "question": s.question,
        "topics": [g.entity_label(t) for t in s.topics],
        "triples": [
            [g.entity_label(t.head), g.relation_label(t.relation), g.entity_label(t.tail)]
            for t in s.subgraph.triples
        ],
        "answers": [g.entity_label(a) for a in sorted(s.answers)],
        "path": path_labels,
        "split": s.split,
    }


def load_question_overrides(path: str | Path) -> dict[int, str]:
    """TSV `id<TAB>question` pairs; the hook for externally generated questions."""
    out: dict[int, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise DatasetError(f"{path}:{lineno}: expected `id<TAB>question`")
        out[int(fields[0])] = fields[1]
    return out


def generate_dataset(
    g: KnowledgeGraph,
    n_samples: int,
    topic_pool: Sequence[int],
    config: DatagenConfig,
    seed: int,
    out_path: str | Path,
    question_overrides: dict[int, str] | None = None,
) -> GenStats:
    """Write `n_samples` JSON-lines QA records, deterministically from `seed`.

    Isolated topics in the pool are skipped with a warning count; an all-
    isolated pool is an error.  The last round(n * val_fraction) samples form
    the validation split.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    usable = [t for t in topic_pool if g.degree(t) > 0]
    skipped = len(topic_pool) - len(usable)
    if not usable:
        raise DatasetError("every topic in the pool is isolated; nothing to generate from")
    if question_overrides:
        bad = [i for i in question_overrides if not 0 <= i < n_samples]
        if bad:
            raise DatasetError(f"question overrides reference unknown sample ids {bad[:5]}")

    n_val = int(round(n_samples * config.val_fraction))
    hop_counts: dict[int, int] = {}
    out_path = Path(out_path)
    with open(out_path, "w", encoding="utf-8") as fh:
        for i in range(n_samples):
            rng = np.random.default_rng((seed, i))
            topic = usable[int(rng.integers(len(usable)))]
            path = sample_path(g, topic, config.max_hops, rng, min_hops=config.min_hops)
            sg = extract_subgraph(g, path, config.entity_budget, rng)
            question = synthesize_question(g, path, config.templates, rng)
            if question_overrides and i in question_overrides:
                question = question_overrides[i]
            answers = chain_answers(sg, topic, path.relations())
            sample = QASample(
                question=question,
                topics=(topic,),
                subgraph=sg,
                answers=frozenset(answers),
                path=path,
                split="validation" if i >= n_samples - n_val else "train",
                sample_id=i,
            )
            sample.validate()
            hop_counts[path.hops] = hop_counts.get(path.hops, 0) + 1
            fh.write(json.dumps(sample_to_record(g, sample)) + "\n")
    return GenStats(
        n_samples=n_samples,
        n_train=n_samples - n_val,
        n_validation=n_val,
        skipped_topics=skipped,
        hop_counts=hop_counts,
    )


def _parse_record(g: KnowledgeGraph, record: dict, lineno: int) -> QASample:
    try:
        topics = tuple(g.entity_id(t) for t in record["topics"])
        triples = tuple(
            Triple(g.entity_id(h), g.relation_id(r), g.entity_id(t))
            for h, r, t in record["triples"]
        )
        answers = frozenset(g.entity_id(a) for a in record["answers"])
        path = None
        raw_path = record.get("path")
        if raw_path:
            start = g.entity_id(raw_path[0])
            steps = []
            ptriples = []
            cur = start
            for j in range(1, len(raw_path), 2):
                r = g.relation_id(raw_path[j])
                e = g.entity_id(raw_path[j + 1])
                steps.append((r, e))
                fwd, rev = Triple(cur, r, e), Triple(e, r, cur)
                if fwd in triples:
                    ptriples.append(fwd)
                elif rev in triples:
                    ptriples.append(rev)
                else:
                    raise DatasetError(f"line {lineno}: path step {j} not backed by a triple")
                cur = e
            path = ReasoningPath(start=start, steps=tuple(steps), triples=tuple(ptriples))
    except KeyError as exc:
        raise DatasetError(f"line {lineno}: unknown label or missing field {exc}") from exc
    sample = QASample(
        question=record["question"],
        topics=topics,
        subgraph=Subgraph(topics=topics, triples=triples),
        answers=answers,
        path=path,
        split=record.get("split", "train"),
        sample_id=int(record.get("id", lineno - 1)),
    )
    sample.validate()
    return sample


def load_dataset(path: str | Path, g: KnowledgeGraph) -> list[QASample]:
    """Read and validate a JSON-lines dataset against the graph's symbol tables."""
    samples: list[QASample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            samples.append(_parse_record(g, record, lineno))
    if not samples:
        raise DatasetError(f"{path}: no samples")
    return samples


def split_samples(samples: Iterable[QASample]) -> tuple[list[QASample], list[QASample]]:
    train = [s for s in samples if s.split != "validation"]
    val = [s for s in samples if s.split == "validation"]
    return train, val


def random_graph(
    n_entities: int = 200,
    n_relations: int = 15,
    n_triples: int = 600,
    seed: int = 0,
) -> KnowledgeGraph:
    """Connected random KG for demos and tests: a spanning backbone plus
    uniform random triples, labels `e<i>` / `rel<j>`."""
    if n_triples < n_entities - 1:
        raise ValueError("need at least n_entities - 1 triples for connectivity")
    rng = np.random.default_rng(seed)
    ents = [f"e{i}" for i in range(n_entities)]
    rels = [f"rel{j}" for j in range(n_relations)]
    rows: list[tuple[str, str, str]] = []
    seen: set[tuple[int, int, int]] = set()

    def add(h: int, r: int, t: int) -> bool:
        if h == t or (h, r, t) in seen:
            return False
        seen.add((h, r, t))
        rows.append((ents[h], rels[r], ents[t]))
        return True

    order = rng.permutation(n_entities)
    for i in range(1, n_entities):
        a = int(order[i])
        b = int(order[int(rng.integers(i))])
        r = int(rng.integers(n_relations))
        if int(rng.integers(2)):
            a, b = b, a
        add(a, r, b)
    while len(rows) < n_triples:
        add(
            int(rng.integers(n_entities)),
            int(rng.integers(n_relations)),
            int(rng.integers(n_entities)),
        )
    return KnowledgeGraph.from_label_triples(rows, entity_order=ents, relation_order=rels)
