"""Command-line interface.

Subcommands cover the full pipeline: `gen-data` synthesizes a QA corpus from
a KG (or a generated toy KG), `adapt` trains the full model on it, `finetune`
tunes reasoning or retrieval on top of an adapted base (adapter-only unless
`--full-params`), `retrieve`
builds question-specific subgraphs, `eval` scores a dataset, `infer` answers
one question end to end, and `selftest` runs fast internal invariant checks.

Options may come from a JSON config file (`--config`); explicit flags win.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .datagen import (
    DatagenConfig,
    load_dataset,
    load_question_overrides,
    generate_dataset,
    random_graph,
    sample_to_record,
    top_degree_entities,
)
from .kg import GraphFormatError, load_graph, write_graph
from .params import (
    POLICY_FULL,
    CheckpointError,
    ModelConfig,
    load_checkpoint,
)
from .retrieval import RetrievalConfig, answer_recall, retrieve_subgraph
from .report import write_eval_report, write_run_report
from .sequence import Vocabulary
from .train import (
    TrainConfig,
    adapt_tune,
    evaluate_dataset,
    finetune_reasoning,
    finetune_retrieval,
    infer,
)


class CliError(RuntimeError):
    """Runtime failure surfaced to the user with exit code 2."""


class _Parser(argparse.ArgumentParser):
    """argparse reserves exit code 2 for usage errors; this project uses 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    grp = p.add_argument_group("model size")
    grp.add_argument("--layers", type=int, default=2)
    grp.add_argument("--d-model", type=int, default=64)
    grp.add_argument("--heads", type=int, default=4)
    grp.add_argument("--d-ff", type=int, default=256)
    grp.add_argument("--max-len", type=int, default=512)
    grp.add_argument("--adapter-dim", type=int, default=8)
    grp.add_argument("--dropout", type=float, default=0.1)


def _add_train_flags(p: argparse.ArgumentParser, lr: float | None, batch: int | None) -> None:
    grp = p.add_argument_group("training")
    grp.add_argument("--epochs", type=int, default=30)
    grp.add_argument("--lr", type=float, default=lr)
    grp.add_argument("--batch-size", type=int, default=batch)
    grp.add_argument("--seed", type=int, default=0)
    grp.add_argument("--eval-interval", type=int, default=1)
    grp.add_argument("--patience", type=int, default=5)
    grp.add_argument("--weight-decay", type=float, default=0.01)
    grp.add_argument("--clip-norm", type=float, default=1.0)
    grp.add_argument("--f1-threshold", type=float, default=0.5)
    grp.add_argument(
        "--no-structural-mask",
        action="store_true",
        help="ablation: let graph tokens attend across the whole graph segment",
    )


def _model_config(args, vocab_size: int = 2) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        layers=args.layers,
        d=args.d_model,
        heads=args.heads,
        d_ff=args.d_ff,
        max_len=args.max_len,
        adapter_dim=args.adapter_dim,
        dropout=args.dropout,
        seed=args.seed,
    )


def _train_config(args, task: str) -> TrainConfig:
    overrides = {}
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if getattr(args, "full_params", False):
        overrides["policy"] = POLICY_FULL
    return TrainConfig.defaults(
        task,
        epochs=args.epochs,
        seed=args.seed,
        eval_interval=args.eval_interval,
        patience=args.patience,
        weight_decay=args.weight_decay,
        clip_norm=args.clip_norm,
        f1_threshold=args.f1_threshold,
        structural_mask=not args.no_structural_mask,
        **overrides,
    )


def _load_model(ckpt: str, vocab_path: str | None):
    params, meta = load_checkpoint(ckpt)
    vp = Path(vocab_path) if vocab_path else Path(ckpt).parent / "vocab.txt"
    if not vp.exists():
        raise CliError(f"vocabulary file not found at {vp}; pass --vocab")
    vocab = Vocabulary.load(vp)
    if vocab.content_hash() != meta["vocab_hash"]:
        raise CliError(f"vocabulary at {vp} does not match the checkpoint")
    return params, vocab, meta


def _print_report(report) -> None:
    print(f"status          {report.status}")
    print(f"epochs run      {report.epochs_run}/{report.epochs_requested}")
    print(f"best epoch      {report.best_epoch}")
    print(f"best val Hits@1 {report.best_val_hits1:.4f}")
    print(f"best val F1     {report.best_val_f1:.4f}")
    print(f"parameters      {report.total_params} total, {report.trainable_params} updated "
          f"({100 * report.updated_fraction:.2f}%)")
    print(f"wall clock      {report.wall_clock_seconds:.1f}s")
    if report.best_checkpoint:
        print(f"checkpoint      {report.best_checkpoint}")


# --------------------------------------------------------------------------
# Subcommands


def cmd_gen_data(args) -> int:
    if bool(args.graph) == bool(args.toy):
        raise CliError("pass exactly one of --graph or --toy")
    if args.toy:
        g = random_graph(
            n_entities=args.toy_entities,
            n_relations=args.toy_relations,
            n_triples=args.toy_triples,
            seed=args.seed,
        )
        if not args.graph_out:
            raise CliError("--toy needs --graph-out to persist the generated graph")
        write_graph(g, args.graph_out, companions=True)
        print(f"wrote toy graph: {g.n_entities} entities, {g.n_relations} relations, "
              f"{len(g.triples)} triples -> {args.graph_out}")
    else:
        g = load_graph(args.graph)
    overrides = load_question_overrides(args.question_file) if args.question_file else None
    config = DatagenConfig(
        max_hops=args.max_hops,
        min_hops=args.min_hops,
        entity_budget=args.entity_budget,
        val_fraction=args.val_fraction,
    )
    pool = top_degree_entities(g, fraction=args.topic_fraction)
    stats = generate_dataset(
        g, args.n_samples, pool, config, args.seed, args.out, question_overrides=overrides
    )
    print(f"wrote {stats.n_samples} samples -> {args.out}")
    print(f"split           {stats.n_train} train / {stats.n_validation} validation")
    print(f"hops            {dict(sorted(stats.hop_counts.items()))}")
    if stats.skipped_topics:
        print(f"warning: skipped {stats.skipped_topics} isolated topic entities", file=sys.stderr)
    return 0


def cmd_adapt(args) -> int:
    g = load_graph(args.graph)
    samples = load_dataset(args.data, g)
    cfg = _train_config(args, "adapt")
    params, vocab, report = adapt_tune(g, samples, _model_config(args), cfg, args.out_dir)
    paths = write_run_report(report, args.out_dir)
    _print_report(report)
    print(f"report          {paths['json']}")
    return 2 if report.status == "diverged" else 0


def _parse_hops(spec: str | None) -> set[int] | None:
    if not spec:
        return None
    try:
        return {int(tok) for tok in spec.split(",") if tok.strip()}
    except ValueError as exc:
        raise CliError(f"bad --hops value {spec!r}; expected e.g. '2' or '1,3'") from exc


def cmd_finetune(args) -> int:
    g = load_graph(args.graph)
    samples = load_dataset(args.data, g)
    hops = _parse_hops(args.hops)
    if hops is not None:
        samples = [s for s in samples if s.path is not None and s.path.hops in hops]
        if not samples:
            raise CliError(f"no samples left after filtering to hops {sorted(hops)}")
    task = "finetune_reason" if args.task == "reason" else "finetune_retrieve"
    cfg = _train_config(args, task)
    if args.skip_adapt:
        from .params import ModelParameters
        from .train import build_vocabulary

        vocab = build_vocabulary(g, samples)
        mc = ModelConfig(**{**_model_config(args).to_dict(), "vocab_size": len(vocab)})
        params = ModelParameters.init(mc)
    elif args.base:
        params, vocab, _meta = _load_model(args.base, args.vocab)
    else:
        raise CliError("pass --base CHECKPOINT, or --skip-adapt to start from random weights")
    if task == "finetune_reason":
        report = finetune_reasoning(
            params, vocab, g, samples, cfg, args.out_dir, from_scratch=args.skip_adapt
        )
    else:
        report = finetune_retrieval(
            params,
            vocab,
            g,
            samples,
            cfg,
            args.out_dir,
            max_hops=args.mine_max_hops,
            n_negatives=args.negatives,
            from_scratch=args.skip_adapt,
        )
    paths = write_run_report(report, args.out_dir)
    _print_report(report)
    print(f"report          {paths['json']}")
    return 2 if report.status == "diverged" else 0


def cmd_retrieve(args) -> int:
    g = load_graph(args.graph)
    samples = load_dataset(args.data, g)
    params, vocab, _meta = _load_model(args.ckpt, args.vocab)
    cfg = RetrievalConfig(k=args.k, max_hops=args.max_hops, entity_cap=args.entity_cap)
    pairs = []
    with open(args.out, "w", encoding="utf-8") as fh:
        for s in samples:
            sg = retrieve_subgraph(g, vocab, params, s.question, s.topics, cfg)
            pairs.append((s, sg))
            record = sample_to_record(
                g,
                type(s)(
                    question=s.question,
                    topics=s.topics,
                    subgraph=sg,
                    answers=s.answers,
                    path=None,
                    split=s.split,
                    sample_id=s.sample_id,
                ),
            )
            fh.write(json.dumps(record) + "\n")
    recall = answer_recall(pairs)
    sizes = [len(sg.triples) for _, sg in pairs]
    print(f"wrote {len(pairs)} retrieved subgraphs -> {args.out}")
    print(f"answer recall   {recall:.4f} (k={cfg.k}, max_hops={cfg.max_hops})")
    print(f"triples/sample  mean {np.mean(sizes):.1f}, max {max(sizes)}")
    return 0


def cmd_eval(args) -> int:
    g = load_graph(args.graph)
    samples = load_dataset(args.data, g)
    params, vocab, meta = _load_model(args.ckpt, args.vocab)
    if args.adapter == "auto":
        adapter = meta.get("adapter")
    else:
        adapter = None if args.adapter == "none" else args.adapter
    aggregate, rows = evaluate_dataset(
        params,
        vocab,
        g,
        samples,
        adapter=adapter,
        f1_threshold=args.f1_threshold,
        structural_mask=not args.no_structural_mask,
    )
    paths = write_eval_report(
        aggregate, rows, args.out_dir, extra={"adapter": adapter, "data": str(args.data)}
    )
    print(f"samples  {aggregate['n']}")
    print(f"Hits@1   {aggregate['hits1']:.4f}")
    print(f"F1       {aggregate['f1']:.4f}")
    print(f"report   {paths['json']}")
    return 0


def cmd_infer(args) -> int:
    g = load_graph(args.graph)
    params, vocab, _meta = _load_model(args.ckpt, args.vocab)
    retriever = None
    if args.retriever:
        retriever, retr_vocab, _ = _load_model(args.retriever, args.vocab)
        if retr_vocab.content_hash() != vocab.content_hash():
            raise CliError("reasoning and retrieval checkpoints use different vocabularies")
    try:
        topics = [g.entity_id(label.strip()) for label in args.topics.split(",")]
    except KeyError as exc:
        raise CliError(f"unknown topic entity {exc.args[0]!r}") from exc
    cfg = RetrievalConfig(k=args.k, max_hops=args.max_hops, entity_cap=args.entity_cap)
    result = infer(
        g,
        vocab,
        params,
        args.question,
        topics,
        retrieval_cfg=cfg,
        retriever_params=retriever,
        top_n=args.top_n,
    )
    if result.topic_only:
        print("warning: retrieval found no triples; answering from the topic alone",
              file=sys.stderr)
    print(f"answer: {result.answer_label}")
    print(f"subgraph triples: {result.n_triples}")
    for label, prob in result.scores:
        print(f"{label}\t{prob:.6f}")
    return 0


# --------------------------------------------------------------------------
# Self test


def _selftest_fixture():
    from .kg import KnowledgeGraph

    g = KnowledgeGraph.from_label_triples(
        [("a", "r", "b"), ("b", "s", "c"), ("a", "s", "d"), ("d", "r", "c")]
    )
    vocab = Vocabulary.build(list(g.entity_labels) + list(g.relation_labels)
                             + ["what is the s of the r of a?"])
    return g, vocab


def _st_serialize():
    from .datagen import chain_answers
    from .serialize import Subgraph, serialize_subgraph

    g, _ = _selftest_fixture()
    sg = Subgraph(topics=(0,), triples=g.triples)
    ser = serialize_subgraph(sg)
    if len(set(ser.tokens)) != len(ser.tokens):
        raise AssertionError("duplicate tokens in serialization")
    pos = {tok: i for i, tok in enumerate(ser.tokens)}
    from .serialize import ENTITY, NodeToken, RELATION

    for t in sg.triples:
        trio = [pos[NodeToken(ENTITY, t.head)], pos[NodeToken(RELATION, t.relation)],
                pos[NodeToken(ENTITY, t.tail)]]
        for i in trio:
            for j in trio:
                if i != j and not ser.adjacent(i, j):
                    raise AssertionError("triple clique missing from adjacency")
    if chain_answers(sg, 0, [0, 1]) != {2}:
        raise AssertionError("relation-chain closure is wrong on the fixture")


def _st_mask():
    from .mask import NEG_INF, build_mask
    from .serialize import Subgraph, serialize_subgraph

    g, _ = _selftest_fixture()
    ser = serialize_subgraph(Subgraph(topics=(0,), triples=g.triples))
    n_q = 3
    m = build_mask(n_q, ser).matrix
    n = n_q + len(ser)
    for i in range(n):
        for j in range(n):
            if i < n_q:
                want = 0.0 if j < n_q else NEG_INF
            elif j < n_q:
                want = 0.0
            else:
                want = 0.0 if (i == j or ser.adjacent(i - n_q, j - n_q)) else NEG_INF
            if m[i, j] != want:
                raise AssertionError(f"mask cell ({i},{j}) = {m[i, j]}, want {want}")


def _st_isolation():
    from .encoder import collate, forward_batch
    from .params import ModelConfig, ModelParameters
    from .sequence import build_input
    from .serialize import Subgraph, serialize_subgraph

    g, vocab = _selftest_fixture()
    cfg = ModelConfig(vocab_size=len(vocab), layers=2, d=16, heads=2, d_ff=32, max_len=64,
                      dropout=0.0, seed=3)
    params = ModelParameters.init(cfg)
    question = "what is the s of the r of a?"
    variants = [
        Subgraph(topics=(0,), triples=g.triples[:1]),
        Subgraph(topics=(0,), triples=g.triples),
    ]
    outs = []
    for sg in variants:
        inp = build_input(question, serialize_subgraph(sg), g, vocab, params)
        batch = collate([inp], params, pad_to=32)
        h, _ = forward_batch(params, batch, mode="eval")
        outs.append(h[0, : inp.n_q])
    if not np.array_equal(outs[0], outs[1]):
        raise AssertionError("question rows changed when the subgraph changed")


def _st_grad():
    from .datagen import QASample
    from .params import ModelConfig, ModelParameters
    from .train import batch_loss_and_grads, prepare_reasoning
    from .serialize import Subgraph

    g, vocab = _selftest_fixture()
    cfg = ModelConfig(vocab_size=len(vocab), layers=1, d=8, heads=2, d_ff=16, max_len=64,
                      dropout=0.0, seed=5)
    params = ModelParameters.init(cfg)
    rng = np.random.default_rng(11)
    for name in params.names():
        if ".adapter." in name:
            params.arrays[name] += rng.normal(0.0, 0.02, size=params.arrays[name].shape)
    params.set_trainable("full")
    sample = QASample(
        question="what is the s of the r of a?",
        topics=(0,),
        subgraph=Subgraph(topics=(0,), triples=g.triples),
        answers=frozenset({2}),
        path=None,
        split="train",
        sample_id=0,
    )
    items, _ = prepare_reasoning([sample], g, vocab, params)
    _, grads = batch_loss_and_grads(params, items, adapter="reasoning", mode="eval")

    def loss_at(name, idx):
        return lambda: batch_loss_and_grads(params, items, adapter="reasoning", mode="eval")[0]

    eps = 1e-5
    coords = [("embed", (2, 1)), ("enc0.attn.wq", (1, 3)), ("enc0.ffn.w1", (0, 2)),
              ("enc0.adapter.reasoning.ffn.up_w", (0, 1)), ("head.w", (4,))]
    for name, idx in coords:
        base = params.arrays[name][idx]
        params.arrays[name][idx] = base + eps
        up = loss_at(name, idx)()
        params.arrays[name][idx] = base - eps
        down = loss_at(name, idx)()
        params.arrays[name][idx] = base
        numeric = (up - down) / (2 * eps)
        analytic = float(grads[name][idx])
        # absolute floor keeps finite-difference noise from dominating the
        # comparison when the true gradient is itself ~0
        err = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-6)
        if err > 1e-4:
            raise AssertionError(f"{name}{idx}: analytic {analytic:.3e} vs numeric {numeric:.3e}")


def _st_loss():
    from .head import kl_divergence, uniform_probs

    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(2, 12))
        hit = np.zeros(n, dtype=bool)
        hit[rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)] = True
        probs = uniform_probs(hit, n)
        if float(probs.sum()) != 1.0:
            raise AssertionError("uniform target does not sum to exactly 1.0")
        q = rng.dirichlet(np.ones(n))
        if kl_divergence(probs, q) < 0:
            raise AssertionError("negative KL divergence")
    p = np.asarray([0.25, 0.75])
    if kl_divergence(p, p) != 0.0:
        raise AssertionError("KL(p, p) must be 0")


def _st_ckpt(tmp_dir: Path):
    from .params import ModelConfig, ModelParameters, load_checkpoint, save_checkpoint

    cfg = ModelConfig(vocab_size=11, layers=1, d=8, heads=2, d_ff=16, max_len=32, seed=9)
    params = ModelParameters.init(cfg)
    path = tmp_dir / "selftest.ckpt"
    save_checkpoint(path, params, vocab_hash="v" * 64, meta={"task": "selftest"})
    loaded, meta = load_checkpoint(path, expected_vocab_hash="v" * 64)
    for name in params.names():
        if not np.array_equal(params.arrays[name], loaded.arrays[name]):
            raise AssertionError(f"tensor {name} changed across save/load")
    if meta["task"] != "selftest":
        raise AssertionError("checkpoint metadata lost")


def cmd_selftest(args) -> int:
    import tempfile

    failures = []

    def check(name, fn):
        try:
            fn()
            print(f"PASS {name}")
        except Exception as exc:  # noqa: BLE001 - report and continue
            print(f"FAIL {name}: {exc}")
            failures.append(name)

    with tempfile.TemporaryDirectory() as td:
        check("serialization invariants", _st_serialize)
        check("attention mask modes", _st_mask)
        check("question isolation", _st_isolation)
        check("gradient check", _st_grad)
        check("loss properties", _st_loss)
        check("checkpoint round trip", lambda: _st_ckpt(Path(td)))
    if failures:
        print(f"{len(failures)} check(s) failed")
        return 2
    print("all checks passed")
    return 0


# --------------------------------------------------------------------------
# Parser assembly


def build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="kgqa", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    commands: dict[str, argparse.ArgumentParser] = {}

    def register(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file with option defaults (flags override)")
        p.set_defaults(func=func)
        commands[name] = p
        return p

    p = register("gen-data", cmd_gen_data, "synthesize multi-hop QA data from a KG")
    p.add_argument("--graph", help="KG triples TSV (head<TAB>relation<TAB>tail)")
    p.add_argument("--toy", action="store_true", help="generate a random toy KG instead")
    p.add_argument("--toy-entities", type=int, default=200)
    p.add_argument("--toy-relations", type=int, default=15)
    p.add_argument("--toy-triples", type=int, default=600)
    p.add_argument("--graph-out", help="where to write the toy KG (with --toy)")
    p.add_argument("--out", required=True, help="output dataset JSONL")
    p.add_argument("--n-samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-hops", type=int, default=3)
    p.add_argument("--min-hops", type=int, default=1)
    p.add_argument("--entity-budget", type=int, default=12)
    p.add_argument("--val-fraction", type=float, default=0.05)
    p.add_argument("--topic-fraction", type=float, default=0.25)
    p.add_argument("--question-file", help="TSV id<TAB>question overriding generated text")

    p = register("adapt", cmd_adapt, "full-parameter training on synthetic QA")
    p.add_argument("--graph", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    _add_model_flags(p)
    _add_train_flags(p, lr=1e-4, batch=40)

    p = register("finetune", cmd_finetune, "task tuning on an adapted base (adapter-only by default)")
    p.add_argument("--task", choices=("reason", "retrieve"), required=True)
    p.add_argument("--base", help="base checkpoint from `adapt`")
    p.add_argument("--vocab", help="vocabulary file (default: vocab.txt next to --base)")
    p.add_argument("--skip-adapt", action="store_true",
                   help="ablation: start from random weights instead of --base")
    p.add_argument("--full-params", action="store_true",
                   help="update all parameters instead of adapters+head only")
    p.add_argument("--graph", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--hops", help="train only on samples with these hop counts, e.g. '2'")
    p.add_argument("--mine-max-hops", type=int, default=4)
    p.add_argument("--negatives", type=int, default=8)
    _add_model_flags(p)
    _add_train_flags(p, lr=None, batch=None)

    p = register("retrieve", cmd_retrieve, "build question-specific subgraphs")
    p.add_argument("--graph", required=True)
    p.add_argument("--data", required=True, help="dataset whose questions to retrieve for")
    p.add_argument("--ckpt", required=True, help="retrieval-tuned checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--out", required=True, help="output JSONL with retrieved triples")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--max-hops", type=int, default=3)
    p.add_argument("--entity-cap", type=int, default=100)

    p = register("eval", cmd_eval, "score a dataset with a trained model")
    p.add_argument("--graph", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--adapter", choices=("auto", "reasoning", "retrieval", "none"),
                   default="auto")
    p.add_argument("--f1-threshold", type=float, default=0.5)
    p.add_argument("--no-structural-mask", action="store_true")

    p = register("infer", cmd_infer, "answer one question end to end")
    p.add_argument("--graph", required=True)
    p.add_argument("--ckpt", required=True, help="reasoning checkpoint")
    p.add_argument("--retriever", help="separate retrieval-tuned checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--question", required=True)
    p.add_argument("--topics", required=True, help="comma-separated topic entity labels")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--max-hops", type=int, default=3)
    p.add_argument("--entity-cap", type=int, default=100)
    p.add_argument("--top-n", type=int, default=10)

    register("selftest", cmd_selftest, "run fast internal invariant checks")

    return parser, commands


def _apply_config_file(argv: list[str], commands: dict[str, argparse.ArgumentParser],
                       parser: _Parser) -> None:
    """Load --config JSON and install it as subcommand defaults (flags win)."""
    command = next((tok for tok in argv if not tok.startswith("-")), None)
    if command not in commands:
        return
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config file {path}: {exc}")
    if not isinstance(raw, dict):
        parser.error(f"config file {path} must hold a JSON object")
    sub = commands[command]
    known = {a.dest for a in sub._actions}
    values = {}
    for key, value in raw.items():
        dest = key.replace("-", "_")
        if dest not in known:
            parser.error(f"config file {path}: unknown option {key!r} for {command}")
        values[dest] = value
    sub.set_defaults(**values)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    try:
        _apply_config_file(argv, commands, parser)
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except (CliError, CheckpointError, GraphFormatError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
