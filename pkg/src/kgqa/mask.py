"""Constrained self-attention mask over a [question ; graph] sequence.

Visibility rules, with q = question positions and g = graph positions:

  q -> q   allowed (the question attends to itself bidirectionally)
  g -> q   allowed (every graph node can read the whole question)
  g -> g   allowed iff same position, or the two nodes share a triple
  q -> g   blocked (question rows are isolated from graph content)

Blocked cells hold a large negative finite constant rather than -inf so the
row-max shift inside softmax stays NaN-free; after softmax a blocked cell's
weight underflows to exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .serialize import SerializedSubgraph

NEG_INF = -1.0e9


@dataclass(frozen=True)
class AttentionMask:
    """Additive mask matrix (entries 0 or NEG_INF) plus the question length."""

    matrix: np.ndarray
    n_q: int

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def to_grid(self) -> str:
        """l x l grid of '1' (allowed) / '·' (blocked), one row per line."""
        rows = []
        for row in self.matrix:
            rows.append("".join("1" if v == 0.0 else "·" for v in row))
        return "\n".join(rows) + "\n"


def build_mask(
    n_q: int,
    serialized: SerializedSubgraph | None = None,
    structural: bool = True,
    dtype=np.float64,
) -> AttentionMask:
    """Build the l x l additive mask for n_q question tokens + a serialized graph.

    `structural=False` relaxes the graph-graph block to fully visible (an
    ablation switch); the question->graph block stays blocked and the
    graph->question block stays open either way.
    """
    if n_q < 1:
        raise ValueError(f"need at least one question token, got n_q={n_q}")
    graph_len = len(serialized.tokens) if serialized is not None else 0
    l = n_q + graph_len

    m = np.full((l, l), NEG_INF, dtype=dtype)
    m[:n_q, :n_q] = 0.0
    if graph_len:
        m[n_q:, :n_q] = 0.0
        if structural:
            for p in range(graph_len):
                m[n_q + p, n_q + p] = 0.0
            for i, j in serialized.adjacency:
                if not (0 <= i < graph_len and 0 <= j < graph_len):
                    raise ValueError(
                        f"adjacency pair ({i}, {j}) out of range for {graph_len} graph tokens"
                    )
                m[n_q + i, n_q + j] = 0.0
                m[n_q + j, n_q + i] = 0.0
        else:
            m[n_q:, n_q:] = 0.0
    m.setflags(write=False)
    return AttentionMask(matrix=m, n_q=n_q)
