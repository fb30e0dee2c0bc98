"""Desk-scale knowledge-graph question answering.

A from-scratch Transformer encoder reads a question next to a serialized KG
subgraph under a structure-aware attention mask and predicts answer entities;
the same encoder doubles as the relation scorer behind iterative subgraph
retrieval.  See the README for the pipeline walkthrough.
"""

from .kg import GraphFormatError, KnowledgeGraph, Triple, load_graph, write_graph
from .serialize import (
    ENTITY,
    RELATION,
    NodeToken,
    SerializedSubgraph,
    Subgraph,
    serialize_subgraph,
    truncate,
)
from .mask import NEG_INF, AttentionMask, build_mask
from .params import (
    CheckpointError,
    ModelConfig,
    ModelParameters,
    checkpoint_hash,
    load_checkpoint,
    save_checkpoint,
)
from .sequence import (
    PAD_ID,
    UNK_ID,
    InputSequence,
    Vocabulary,
    build_input,
    embed_node,
    embed_positions,
    node_rows,
    split_text,
)
from .encoder import Batch, EncoderError, collate, forward, forward_batch, backward_batch
from .head import (
    AnswerScores,
    TargetDistribution,
    build_target,
    f1_score,
    hits_at_1,
    kl_divergence,
    kl_grad_logits,
    score_entities,
    uniform_probs,
)
from .datagen import (
    DatagenConfig,
    DatasetError,
    QASample,
    QuestionTemplate,
    ReasoningPath,
    chain_answers,
    extract_subgraph,
    generate_dataset,
    load_dataset,
    random_graph,
    sample_path,
    synthesize_question,
    top_degree_entities,
)
from .retrieval import (
    RelationScore,
    RetrievalConfig,
    RetrievalExample,
    answer_recall,
    mine_training_pairs,
    retrieve_subgraph,
    score_relations,
)
from .train import (
    AdamW,
    InferResult,
    RunReport,
    TrainConfig,
    adapt_tune,
    evaluate_dataset,
    finetune_reasoning,
    finetune_retrieval,
    infer,
)
from .report import write_eval_report, write_run_report

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
