"""Run and evaluation reports: JSON for machines, TSV for spreadsheets,
and a PNG rendering of the same numbers for a quick look."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .train import RunReport


def _write_tsv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join("" if v is None else str(v) for v in row) + "\n")


def write_run_report(report: RunReport, out_dir: str | Path) -> dict[str, Path]:
    """report.json, metrics.tsv, and training curves under `out_dir`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out_dir / "report.json",
        "tsv": out_dir / "metrics.tsv",
        "png": out_dir / "curves.png",
    }
    paths["json"].write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    _write_tsv(
        paths["tsv"],
        ("epoch", "train_loss", "val_hits1", "val_f1"),
        [(m["epoch"], m["train_loss"], m["val_hits1"], m["val_f1"]) for m in report.epoch_metrics],
    )

    fig, (ax_loss, ax_metric) = plt.subplots(1, 2, figsize=(9, 3.5))
    epochs = [m["epoch"] for m in report.epoch_metrics]
    ax_loss.plot(epochs, [m["train_loss"] for m in report.epoch_metrics], marker="o")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train KL loss")
    ax_loss.set_title(f"{report.task} ({report.status})")
    evaluated = [m for m in report.epoch_metrics if m["val_hits1"] is not None]
    if evaluated:
        xs = [m["epoch"] for m in evaluated]
        ax_metric.plot(xs, [m["val_hits1"] for m in evaluated], marker="o", label="Hits@1")
        ax_metric.plot(xs, [m["val_f1"] for m in evaluated], marker="s", label="F1")
        ax_metric.axvline(report.best_epoch, color="gray", linestyle=":", linewidth=1)
        ax_metric.set_ylim(0.0, 1.05)
        ax_metric.legend()
    ax_metric.set_xlabel("epoch")
    ax_metric.set_ylabel("validation metric")
    fig.tight_layout()
    fig.savefig(paths["png"], dpi=120)
    plt.close(fig)
    return paths


def write_eval_report(
    aggregate: dict,
    rows: Sequence[dict],
    out_dir: str | Path,
    extra: dict | None = None,
) -> dict[str, Path]:
    """eval.json, per_sample.tsv, and a hit/miss confidence histogram."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out_dir / "eval.json",
        "tsv": out_dir / "per_sample.tsv",
        "png": out_dir / "eval.png",
    }
    payload = dict(aggregate)
    if extra:
        payload.update(extra)
    paths["json"].write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    header = ("id", "split", "hit", "precision", "recall", "f1", "top_id", "top_prob", "n_answers")
    _write_tsv(paths["tsv"], header, [[r[k] for k in header] for r in rows])

    fig, ax = plt.subplots(figsize=(5, 3.5))
    hits = [r["top_prob"] for r in rows if r["hit"]]
    misses = [r["top_prob"] for r in rows if not r["hit"]]
    bins = [i / 20 for i in range(21)]
    ax.hist([hits, misses], bins=bins, stacked=True, label=["hit", "miss"],
            color=["tab:green", "tab:red"])
    ax.set_xlabel("top answer probability")
    ax.set_ylabel("samples")
    ax.set_title(f"Hits@1 {aggregate['hits1']:.3f}   F1 {aggregate['f1']:.3f}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(paths["png"], dpi=120)
    plt.close(fig)
    return paths
