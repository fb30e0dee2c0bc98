"""Training, evaluation, and inference pipelines.

Three tasks share one loop: `adapt` trains every parameter on synthetic
answer-entity prediction, `finetune_reason` and `finetune_retrieve` train
only the task adapters plus the scoring head on top of a frozen base.  The
loop is plain mini-batch AdamW over the KL objective with best-checkpoint
selection on validation Hits@1 and patience-based early stopping.  Everything
downstream of the seed is deterministic, so a rerun reproduces metrics and
checkpoint bytes.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datagen import QASample, split_samples
from .encoder import backward_batch, collate, forward, forward_batch
from .head import (
    AnswerScores,
    build_target,
    f1_score,
    hits_at_1,
    kl_divergence,
    kl_grad_logits,
    score_entities,
    softmax_1d,
    uniform_probs,
)
from .kg import KnowledgeGraph
from .params import (
    POLICY_ADAPTERS,
    POLICY_FULL,
    ModelConfig,
    ModelParameters,
    save_checkpoint,
)
from .retrieval import (
    RetrievalConfig,
    RetrievalExample,
    candidate_input,
    mine_training_pairs,
    retrieve_subgraph,
)
from .sequence import InputSequence, Vocabulary, build_input, split_text
from .serialize import serialize_subgraph

TASKS = ("adapt", "finetune_reason", "finetune_retrieve")

_TASK_DEFAULTS = {
    # (learning rate, batch size, trainable policy)
    "adapt": (1e-4, 40, POLICY_FULL),
    "finetune_reason": (1e-4, 40, POLICY_ADAPTERS),
    "finetune_retrieve": (5e-5, 10, POLICY_ADAPTERS),
}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    task: str
    learning_rate: float
    batch_size: int
    epochs: int
    seed: int = 0
    policy: str = POLICY_FULL
    eval_interval: int = 1
    patience: int = 5
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    f1_threshold: float = 0.5
    structural_mask: bool = True

    @classmethod
    def defaults(cls, task: str, epochs: int, seed: int = 0, **overrides) -> "TrainConfig":
        if task not in _TASK_DEFAULTS:
            raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
        lr, batch, policy = _TASK_DEFAULTS[task]
        kwargs = dict(
            task=task,
            learning_rate=lr,
            batch_size=batch,
            epochs=epochs,
            seed=seed,
            policy=policy,
        )
        kwargs.update(overrides)
        return cls(**kwargs)

    def __post_init__(self):
        if self.task not in _TASK_DEFAULTS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.eval_interval < 1 or self.patience < 0:
            raise ValueError("eval_interval must be >= 1 and patience >= 0")
        if not 0.0 < self.f1_threshold <= 1.0:
            raise ValueError("f1_threshold must be in (0, 1]")
        if self.policy not in (POLICY_FULL, POLICY_ADAPTERS):
            raise ValueError(f"unknown trainable policy {self.policy!r}")
        # Adaptation is full-parameter by definition; fine-tuning is
        # adapter-only by default but may opt in to full-parameter updates.
        if self.task == "adapt" and self.policy != POLICY_FULL:
            raise ValueError(
                f"task 'adapt' requires trainable policy {POLICY_FULL!r}, got {self.policy!r}"
            )


@dataclass
class RunReport:
    """Everything a run leaves behind besides the checkpoint itself."""

    task: str
    status: str  # completed | early_stopped | diverged
    seed: int
    epochs_requested: int
    epochs_run: int
    epoch_metrics: list[dict]
    best_epoch: int
    best_val_hits1: float
    best_val_f1: float
    best_checkpoint: str | None
    total_params: int
    trainable_params: int
    updated_fraction: float
    wall_clock_seconds: float
    n_train: int
    n_validation: int
    n_skipped: int
    structural_mask: bool
    from_scratch: bool = False
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# Optimizer


_NO_DECAY_LEAVES = {"b", "bq", "bk", "bv", "bo", "b1", "b2", "down_b", "up_b", "scale", "shift"}


def _decayed(name: str) -> bool:
    return name.rsplit(".", 1)[-1] not in _NO_DECAY_LEAVES


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


class AdamW:
    """Decoupled weight decay Adam over named tensors.

    Only tensors present in the gradient dict are touched on a step, so
    frozen parameters and inactive adapters keep their exact bytes.
    """

    def __init__(
        self,
        params: ModelParameters,
        lr: float,
        weight_decay: float = 0.01,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        clip_norm: float = 1.0,
    ):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        clip_global_norm(grads, self.clip_norm)
        self.t += 1
        correct1 = 1.0 - self.beta1**self.t
        correct2 = 1.0 - self.beta2**self.t
        for name in sorted(grads):
            if not self.params.trainable[name]:
                raise TrainingError(f"gradient supplied for frozen tensor {name!r}")
            g = np.asarray(grads[name], dtype=self.params.arrays[name].dtype)
            if name not in self._m:
                self._m[name] = np.zeros_like(self.params.arrays[name])
                self._v[name] = np.zeros_like(self.params.arrays[name])
            m, v = self._m[name], self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / correct1) / (np.sqrt(v / correct2) + self.eps)
            p = self.params.arrays[name]
            if self.weight_decay and _decayed(name):
                p -= self.lr * self.weight_decay * p
            p -= self.lr * update


# --------------------------------------------------------------------------
# Sample preparation


@dataclass
class PreparedSample:
    """One ready-to-batch training or evaluation item.

    `score_positions` are absolute positions read by the scalar head;
    `score_ids` identify the entity (reasoning) or relation (retrieval) at
    each of them; `target` may be None for unanswerable evaluation items.
    """

    input: InputSequence
    score_positions: np.ndarray
    score_ids: np.ndarray
    target: np.ndarray | None
    answers: frozenset[int]
    sample_id: int
    split: str


def prepare_reasoning(
    samples: Sequence[QASample],
    g: KnowledgeGraph,
    vocab: Vocabulary,
    params: ModelParameters,
    structural_mask: bool = True,
    keep_unanswerable: bool = False,
) -> tuple[list[PreparedSample], int]:
    """Serialize each sample's subgraph and attach the answer target.

    Samples whose answers fall outside the (possibly truncated) serialization
    are dropped for training and kept as guaranteed misses for evaluation.
    Returns the items and the dropped count.
    """
    items: list[PreparedSample] = []
    skipped = 0
    for s in samples:
        serialized = serialize_subgraph(s.subgraph)
        inp = build_input(
            s.question, serialized, g, vocab, params, structural_mask=structural_mask
        )
        target = build_target(s.answers, inp.graph, inp.n_q)
        if target is None:
            if not keep_unanswerable:
                skipped += 1
                continue
            probs = None
        else:
            probs = target.probs
        items.append(
            PreparedSample(
                input=inp,
                score_positions=inp.entity_positions,
                score_ids=inp.entity_ids,
                target=probs,
                answers=s.answers,
                sample_id=s.sample_id,
                split=s.split,
            )
        )
    return items, skipped


def prepare_retrieval(
    examples: Sequence[RetrievalExample],
    g: KnowledgeGraph,
    vocab: Vocabulary,
    params: ModelParameters,
    val_fraction: float = 0.05,
) -> tuple[list[PreparedSample], int]:
    """One item per example: candidates vs a uniform target over the union of
    the per-hop positives.

    The scorer is applied hop-blind at retrieval time (the hop index is not an
    input to `score_relations`), so per-hop targets would present the same
    encoded question with contradictory labels; the union marginal is the
    distribution the deployed scorer actually needs.  Candidates are the union
    positives plus the example's negatives, sorted by relation id to match
    `score_relations` encoding.  The trailing `val_fraction` of the examples
    becomes validation.  Items whose candidates would not fit beside the
    question are dropped with a count.
    """
    items: list[PreparedSample] = []
    skipped = 0
    n_val = int(round(len(examples) * val_fraction))
    val_start = len(examples) - n_val
    for ex_idx, ex in enumerate(examples):
        split = "validation" if ex_idx >= val_start else "train"
        n_q = len(split_text(ex.question))
        positives = frozenset().union(*ex.positives) if ex.positives else frozenset()
        if not positives:
            continue
        candidates = sorted(positives | set(ex.negatives))
        if n_q + len(candidates) > params.config.max_len:
            skipped += 1
            continue
        inp = candidate_input(ex.question, candidates, g, vocab, params)
        hit = np.asarray([c in positives for c in candidates], dtype=bool)
        items.append(
            PreparedSample(
                input=inp,
                score_positions=np.arange(n_q, n_q + len(candidates), dtype=np.int64),
                score_ids=np.asarray(candidates, dtype=np.int64),
                target=uniform_probs(hit, len(candidates)),
                answers=positives,
                sample_id=ex_idx,
                split=split,
            )
        )
    return items, skipped


# --------------------------------------------------------------------------
# Loss and metrics


def batch_loss_and_grads(
    params: ModelParameters,
    items: Sequence[PreparedSample],
    adapter: str | None,
    rng: np.random.Generator | None = None,
    mode: str = "train",
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean KL loss over the batch and gradients for every trainable tensor."""
    batch = collate([it.input for it in items], params)
    h, tape = forward_batch(params, batch, mode=mode, rng=rng, adapter=adapter, want_tape=True)
    w = params["head.w"]
    b = float(params["head.b"])
    d_h = np.zeros_like(h)
    d_w = np.zeros_like(w)
    d_b = 0.0
    total = 0.0
    n = len(items)
    for i, it in enumerate(items):
        if it.target is None:
            raise TrainingError("cannot train on an item without a target distribution")
        pos = it.score_positions
        logits = h[i, pos] @ w + b
        predicted = softmax_1d(logits)
        total += kl_divergence(it.target, predicted)
        d_logits = kl_grad_logits(it.target, predicted) / n
        d_h[i, pos] += np.outer(d_logits, w)
        d_w += h[i, pos].T @ d_logits
        d_b += float(d_logits.sum())
    grads = backward_batch(params, tape, d_h)
    if params.trainable["head.w"]:
        grads["head.w"] = grads.get("head.w", 0.0) + d_w
    if params.trainable["head.b"]:
        grads["head.b"] = grads.get("head.b", 0.0) + np.asarray(d_b, dtype=params["head.b"].dtype)
    return total / n, grads


def _item_scores(h_row: np.ndarray, item: PreparedSample, params: ModelParameters) -> AnswerScores:
    return score_entities(
        h_row, item.score_positions, item.score_ids, params["head.w"], params["head.b"]
    )


def evaluate_items(
    params: ModelParameters,
    items: Sequence[PreparedSample],
    adapter: str | None,
    f1_threshold: float = 0.5,
    batch_size: int = 64,
) -> tuple[dict, list[dict]]:
    """Hits@1 and F1 over prepared items, deterministic eval-mode forward."""
    if not items:
        raise ValueError("cannot evaluate an empty item list")
    rows: list[dict] = []
    for start in range(0, len(items), batch_size):
        chunk = items[start : start + batch_size]
        batch = collate([it.input for it in chunk], params)
        h, _ = forward_batch(params, batch, mode="eval", adapter=adapter)
        for i, it in enumerate(chunk):
            scores = _item_scores(h[i], it, params)
            top = scores.top_entity()
            hit = hits_at_1(scores, it.answers)
            precision, recall, f1 = f1_score(scores, it.answers, threshold=f1_threshold)
            rows.append(
                {
                    "id": it.sample_id,
                    "split": it.split,
                    "hit": int(hit),
                    "precision": precision,
                    "recall": recall,
                    "f1": f1,
                    "top_id": int(top),
                    "top_prob": float(scores.probs.max()),
                    "n_answers": len(it.answers),
                }
            )
    aggregate = {
        "n": len(rows),
        "hits1": float(np.mean([r["hit"] for r in rows])),
        "f1": float(np.mean([r["f1"] for r in rows])),
        "precision": float(np.mean([r["precision"] for r in rows])),
        "recall": float(np.mean([r["recall"] for r in rows])),
    }
    return aggregate, rows


# --------------------------------------------------------------------------
# The shared loop


def run_training(
    params: ModelParameters,
    train_items: Sequence[PreparedSample],
    val_items: Sequence[PreparedSample],
    cfg: TrainConfig,
    out_dir: str | Path,
    adapter: str | None,
    vocab: Vocabulary,
    n_skipped: int = 0,
    from_scratch: bool = False,
    extra_meta: dict | None = None,
) -> RunReport:
    """Mini-batch AdamW with best-checkpoint selection on validation Hits@1.

    Writes `best.ckpt` and `vocab.txt` under `out_dir`.  Non-finite loss
    aborts with status "diverged"; `patience` evaluations without improvement
    stop early.  With 0 epochs the initial parameters are saved as best.
    """
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(out_dir / "vocab.txt")
    vocab_hash = vocab.content_hash()
    ckpt_path = out_dir / "best.ckpt"
    rng = np.random.default_rng(cfg.seed)
    optimizer = AdamW(
        params,
        lr=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
        clip_norm=cfg.clip_norm,
    )
    total_params, trainable_params = params.count_parameters()

    best = {"epoch": 0, "hits1": -1.0, "f1": 0.0}

    def save_best(epoch: int, hits1: float, f1: float) -> None:
        best.update(epoch=epoch, hits1=hits1, f1=f1)
        meta = {
            "task": cfg.task,
            "adapter": adapter,
            "epoch": epoch,
            "val_hits1": hits1,
            "val_f1": f1,
            "seed": cfg.seed,
            "structural_mask": cfg.structural_mask,
        }
        meta.update(extra_meta or {})
        save_checkpoint(ckpt_path, params, vocab_hash, meta=meta)

    def validate() -> tuple[float, float]:
        if not val_items:
            return 0.0, 0.0
        agg, _ = evaluate_items(params, val_items, adapter, f1_threshold=cfg.f1_threshold)
        return agg["hits1"], agg["f1"]

    status = "completed"
    epoch_metrics: list[dict] = []
    epochs_run = 0
    stale = 0

    if cfg.epochs == 0 or not train_items:
        hits1, f1 = validate()
        save_best(0, hits1, f1)
    for epoch in range(1, cfg.epochs + 1):
        if not train_items:
            break
        order = rng.permutation(len(train_items))
        losses: list[float] = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = [train_items[i] for i in order[start : start + cfg.batch_size]]
            loss, grads = batch_loss_and_grads(params, chunk, adapter, rng=rng, mode="train")
            if not np.isfinite(loss):
                status = "diverged"
                break
            optimizer.step(grads)
            losses.append(loss)
        epochs_run = epoch
        if status == "diverged":
            epoch_metrics.append(
                {"epoch": epoch, "train_loss": float("nan"), "val_hits1": None, "val_f1": None}
            )
            break
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else 0.0}
        if epoch % cfg.eval_interval == 0 or epoch == cfg.epochs:
            hits1, f1 = validate()
            record.update(val_hits1=hits1, val_f1=f1)
            if hits1 > best["hits1"]:
                save_best(epoch, hits1, f1)
                stale = 0
            else:
                stale += 1
        else:
            record.update(val_hits1=None, val_f1=None)
        epoch_metrics.append(record)
        if stale > cfg.patience:
            status = "early_stopped"
            break

    if best["hits1"] < 0.0:
        # Diverged before the first evaluation; nothing worth saving.
        best_path = None
    else:
        best_path = str(ckpt_path)
    return RunReport(
        task=cfg.task,
        status=status,
        seed=cfg.seed,
        epochs_requested=cfg.epochs,
        epochs_run=epochs_run,
        epoch_metrics=epoch_metrics,
        best_epoch=best["epoch"],
        best_val_hits1=max(best["hits1"], 0.0),
        best_val_f1=best["f1"],
        best_checkpoint=best_path,
        total_params=total_params,
        trainable_params=trainable_params,
        updated_fraction=trainable_params / total_params,
        wall_clock_seconds=time.perf_counter() - t0,
        n_train=len(train_items),
        n_validation=len(val_items),
        n_skipped=n_skipped,
        structural_mask=cfg.structural_mask,
        from_scratch=from_scratch,
    )


# --------------------------------------------------------------------------
# Task pipelines


def build_vocabulary(g: KnowledgeGraph, samples: Iterable[QASample]) -> Vocabulary:
    """Graph labels first, then train-split question text, first appearance wins."""
    texts = list(g.entity_labels) + list(g.relation_labels)
    texts.extend(s.question for s in samples if s.split != "validation")
    return Vocabulary.build(texts)


def adapt_tune(
    g: KnowledgeGraph,
    samples: Sequence[QASample],
    model_config: ModelConfig,
    cfg: TrainConfig,
    out_dir: str | Path,
) -> tuple[ModelParameters, Vocabulary, RunReport]:
    """Full-parameter training from random init; adapters stay inactive."""
    if cfg.task != "adapt":
        raise ValueError(f"adapt_tune got config for task {cfg.task!r}")
    vocab = build_vocabulary(g, samples)
    model_config = ModelConfig(**{**model_config.to_dict(), "vocab_size": len(vocab)})
    params = ModelParameters.init(model_config)
    params.set_trainable(POLICY_FULL)
    train, val = split_samples(samples)
    train_items, skipped_t = prepare_reasoning(
        train, g, vocab, params, structural_mask=cfg.structural_mask
    )
    val_items, skipped_v = prepare_reasoning(
        val, g, vocab, params, structural_mask=cfg.structural_mask, keep_unanswerable=True
    )
    report = run_training(
        params,
        train_items,
        val_items,
        cfg,
        out_dir,
        adapter=None,
        vocab=vocab,
        n_skipped=skipped_t + skipped_v,
    )
    return params, vocab, report


def finetune_reasoning(
    params: ModelParameters,
    vocab: Vocabulary,
    g: KnowledgeGraph,
    samples: Sequence[QASample],
    cfg: TrainConfig,
    out_dir: str | Path,
    from_scratch: bool = False,
) -> RunReport:
    """Tune answer reasoning on a frozen base (adapter+head unless cfg opts into full)."""
    if cfg.task != "finetune_reason":
        raise ValueError(f"finetune_reasoning got config for task {cfg.task!r}")
    params.set_trainable(cfg.policy, adapter="reasoning")
    train, val = split_samples(samples)
    train_items, skipped_t = prepare_reasoning(
        train, g, vocab, params, structural_mask=cfg.structural_mask
    )
    val_items, skipped_v = prepare_reasoning(
        val, g, vocab, params, structural_mask=cfg.structural_mask, keep_unanswerable=True
    )
    return run_training(
        params,
        train_items,
        val_items,
        cfg,
        out_dir,
        adapter="reasoning",
        vocab=vocab,
        n_skipped=skipped_t + skipped_v,
        from_scratch=from_scratch,
    )


def finetune_retrieval(
    params: ModelParameters,
    vocab: Vocabulary,
    g: KnowledgeGraph,
    samples: Sequence[QASample],
    cfg: TrainConfig,
    out_dir: str | Path,
    max_hops: int = 4,
    n_negatives: int = 8,
    from_scratch: bool = False,
) -> RunReport:
    """Tune the relation scorer on mined shortest-path pairs.

    Trains the retrieval adapters plus head by default; cfg.policy may opt
    into full-parameter updates when the frozen base is too small to carry
    the question-relation matching through the bottleneck alone.
    """
    if cfg.task != "finetune_retrieve":
        raise ValueError(f"finetune_retrieval got config for task {cfg.task!r}")
    params.set_trainable(cfg.policy, adapter="retrieval")
    rng = np.random.default_rng(cfg.seed)
    examples, skipped_mine = mine_training_pairs(
        g, samples, rng, max_hops=max_hops, n_negatives=n_negatives
    )
    items, skipped_fit = prepare_retrieval(examples, g, vocab, params)
    train_items = [it for it in items if it.split != "validation"]
    val_items = [it for it in items if it.split == "validation"]
    return run_training(
        params,
        train_items,
        val_items,
        cfg,
        out_dir,
        adapter="retrieval",
        vocab=vocab,
        n_skipped=skipped_mine + skipped_fit,
        from_scratch=from_scratch,
        extra_meta={"n_mined_examples": len(examples)},
    )


def evaluate_dataset(
    params: ModelParameters,
    vocab: Vocabulary,
    g: KnowledgeGraph,
    samples: Sequence[QASample],
    adapter: str | None = "reasoning",
    f1_threshold: float = 0.5,
    structural_mask: bool = True,
) -> tuple[dict, list[dict]]:
    """Answer-entity metrics over a dataset; absent answers count as misses."""
    if not samples:
        raise ValueError("cannot evaluate an empty dataset")
    items, _ = prepare_reasoning(
        samples, g, vocab, params, structural_mask=structural_mask, keep_unanswerable=True
    )
    return evaluate_items(params, items, adapter, f1_threshold=f1_threshold)


@dataclass(frozen=True)
class InferResult:
    answer_id: int
    answer_label: str
    scores: tuple[tuple[str, float], ...]  # label -> probability, descending
    n_triples: int
    topic_only: bool


def infer(
    g: KnowledgeGraph,
    vocab: Vocabulary,
    params: ModelParameters,
    question: str,
    topics: Sequence[int],
    retrieval_cfg: RetrievalConfig | None = None,
    retriever_params: ModelParameters | None = None,
    structural_mask: bool = True,
    top_n: int = 10,
) -> InferResult:
    """retrieve -> serialize -> encode -> score -> argmax, one question.

    `retriever_params` lets retrieval run on a separately fine-tuned
    checkpoint; otherwise the reasoning parameters score relations too.  A
    topic with no scored expansion degenerates to a topic-only subgraph and
    the topic itself comes back flagged.
    """
    retr = retriever_params if retriever_params is not None else params
    sg = retrieve_subgraph(g, vocab, retr, question, topics, cfg=retrieval_cfg)
    serialized = serialize_subgraph(sg)
    inp = build_input(question, serialized, g, vocab, params, structural_mask=structural_mask)
    h = forward(params, inp, mode="eval", adapter="reasoning")
    scores = score_entities(
        h, inp.entity_positions, inp.entity_ids, params["head.w"], params["head.b"]
    )
    top = int(scores.top_entity())
    order = np.argsort(-scores.probs, kind="stable")[:top_n]
    table = tuple(
        (g.entity_label(int(scores.entity_ids[i])), float(scores.probs[i])) for i in order
    )
    return InferResult(
        answer_id=top,
        answer_label=g.entity_label(top),
        scores=table,
        n_triples=len(sg.triples),
        topic_only=not sg.triples,
    )
