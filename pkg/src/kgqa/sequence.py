"""Question tokenization, node embedding by subword sum, and joint input assembly.

The encoder input is the question token sequence followed by the serialized
graph tokens, sharing one absolute position table (a separate graph table is
available behind a config switch).  A graph node's embedding is the sum of
the word embeddings of its label, so multi-word labels ("new york") reuse the
question vocabulary.  No CLS/SEP specials; PAD=0 and UNK=1 are reserved.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .kg import KnowledgeGraph
from .mask import AttentionMask, build_mask
from .params import ModelParameters
from .serialize import ENTITY, SerializedSubgraph, truncate

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def split_text(text: str) -> list[str]:
    """Lowercase and split into word runs and single punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token <-> id table with reserved PAD (0) and UNK (1)."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens = list(tokens)
        if self.tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary must start with the PAD and UNK tokens")
        self._index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        """Collect tokens from the corpus in first-appearance order (min frequency 1)."""
        toks = [PAD_TOKEN, UNK_TOKEN]
        seen = set(toks)
        for text in texts:
            for tok in split_text(text):
                if tok not in seen:
                    seen.add(tok)
                    toks.append(tok)
        return cls(toks)

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def encode(self, text: str) -> list[int]:
        return [self._index.get(tok, UNK_ID) for tok in split_text(text)]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)

    def content_hash(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


def node_label(g: KnowledgeGraph, kind: str, node_id: int) -> str:
    return g.entity_label(node_id) if kind == ENTITY else g.relation_label(node_id)


def node_rows(g: KnowledgeGraph, vocab: Vocabulary, kind: str, node_id: int) -> list[int]:
    """Vocabulary rows whose embeddings sum to the node's embedding."""
    ids = vocab.encode(node_label(g, kind, node_id))
    return ids if ids else [UNK_ID]


def embed_node(
    kind: str,
    node_id: int,
    g: KnowledgeGraph,
    vocab: Vocabulary,
    table: np.ndarray,
) -> np.ndarray:
    """Sum of the label's subword embedding rows; empty labels fall back to UNK."""
    return table[node_rows(g, vocab, kind, node_id)].sum(axis=0)


@dataclass
class InputSequence:
    """One encoder input: question ids, graph tokens, mask, and embedding plan.

    `token_rows[p]` lists the embedding-table rows summed at position p, so
    the forward pass can recompute the input matrix under updated parameters;
    `n_e` is that matrix evaluated with the parameters passed at build time.
    `entity_positions` are absolute (question offset included) and aligned
    with `entity_ids`.
    """

    question_ids: list[int]
    graph: SerializedSubgraph
    length: int
    token_rows: list[list[int]]
    entity_positions: np.ndarray
    entity_ids: np.ndarray
    mask: AttentionMask
    n_e: np.ndarray

    @property
    def n_q(self) -> int:
        return len(self.question_ids)

    @property
    def topic_positions(self) -> tuple[int, ...]:
        return tuple(self.n_q + p for p in self.graph.topic_positions)


def embed_positions(params: ModelParameters, n_q: int, graph_len: int) -> np.ndarray:
    """Position rows for a [question ; graph] layout under the config's table scheme."""
    cfg = params.config
    l = n_q + graph_len
    if cfg.separate_graph_positions:
        out = np.empty((l, cfg.d), dtype=cfg.np_dtype)
        out[:n_q] = params["pos"][:n_q]
        out[n_q:] = params["pos_graph"][:graph_len]
        return out
    return params["pos"][:l].astype(cfg.np_dtype, copy=False)


def build_input(
    question: str,
    serialized: SerializedSubgraph,
    g: KnowledgeGraph,
    vocab: Vocabulary,
    params: ModelParameters,
    max_len: int | None = None,
    structural_mask: bool = True,
) -> InputSequence:
    """Assemble [question ; graph] rows, positions, mask, and entity index.

    The graph segment is truncated (serializer rules) when the joint length
    would exceed `max_len`; a question so long that not even the topic entity
    fits is an error, as is a question with no tokens.
    """
    cfg = params.config
    if max_len is None:
        max_len = cfg.max_len
    q_ids = vocab.encode(question)
    if not q_ids:
        raise ValueError("question produced no tokens")
    budget = max_len - len(q_ids)
    if budget < 1:
        raise ValueError(
            f"question occupies {len(q_ids)} of {max_len} positions; no room for the topic entity"
        )
    ser = truncate(serialized, budget)
    n_q = len(q_ids)
    l = n_q + len(ser.tokens)

    token_rows: list[list[int]] = [[qid] for qid in q_ids]
    for tok in ser.tokens:
        token_rows.append(node_rows(g, vocab, tok.kind, tok.id))

    ent_pos = [n_q + p for p, tok in enumerate(ser.tokens) if tok.kind == ENTITY]
    ent_ids = [ser.tokens[p - n_q].id for p in ent_pos]

    table = params["embed"]
    n_e = np.zeros((l, cfg.d), dtype=cfg.np_dtype)
    for p, rows in enumerate(token_rows):
        n_e[p] = table[rows].sum(axis=0)
    n_e += embed_positions(params, n_q, len(ser.tokens))

    return InputSequence(
        question_ids=q_ids,
        graph=ser,
        length=l,
        token_rows=token_rows,
        entity_positions=np.asarray(ent_pos, dtype=np.int64),
        entity_ids=np.asarray(ent_ids, dtype=np.int64),
        mask=build_mask(n_q, ser, structural=structural_mask, dtype=cfg.np_dtype),
        n_e=n_e,
    )
