"""Shared fixtures.

BLAS threading is pinned to one core before numpy loads: the acceptance
suite asserts single-core wall-clock budgets and bitwise reproducibility,
both of which depend on a fixed thread count.
"""

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from kgqa import KnowledgeGraph, ModelConfig, ModelParameters, Subgraph, Vocabulary

TINY_TRIPLES = [("A", "r", "B"), ("B", "s", "C"), ("A", "s", "D")]


@pytest.fixture
def tiny_graph() -> KnowledgeGraph:
    """A=0, B=1, C=2, D=3; r=0, s=1; triples in the order above."""
    return KnowledgeGraph.from_label_triples(TINY_TRIPLES)


@pytest.fixture
def tiny_subgraph(tiny_graph) -> Subgraph:
    return Subgraph(topics=(0,), triples=tiny_graph.triples)


@pytest.fixture
def tiny_vocab(tiny_graph) -> Vocabulary:
    texts = list(tiny_graph.entity_labels) + list(tiny_graph.relation_labels)
    texts += ["what is the s of the r of A?", "who is the r of A?"]
    return Vocabulary.build(texts)


def small_params(vocab_size: int, seed: int = 0, **overrides) -> ModelParameters:
    cfg = dict(
        vocab_size=vocab_size,
        layers=2,
        d=16,
        heads=2,
        d_ff=32,
        max_len=64,
        adapter_dim=4,
        dropout=0.0,
        seed=seed,
    )
    cfg.update(overrides)
    return ModelParameters.init(ModelConfig(**cfg))


@pytest.fixture
def tiny_params(tiny_vocab) -> ModelParameters:
    return small_params(len(tiny_vocab))


def perturb_adapters(params: ModelParameters, seed: int = 99) -> ModelParameters:
    """Give adapter tensors non-trivial values so gradients flow through them."""
    rng = np.random.default_rng(seed)
    for name in params.names():
        if ".adapter." in name:
            params.arrays[name] = params.arrays[name] + rng.normal(
                0.0, 0.05, size=params.arrays[name].shape
            )
    return params
