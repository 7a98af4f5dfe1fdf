"""
Offline figures and comparison tables from finished run directories.

A run directory holds ``metrics.log`` (required), ``config.cfg`` (used for
the column label) and optionally ``eval.json`` (the evaluation summary of
its best checkpoint, which supplies per-category AP).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..data import CATEGORY_NAMES  # noqa: E402
from ..errors import ParseError, ReportError  # noqa: E402
from .config import load_config  # noqa: E402
from .train import EVAL_FILE, METRICS_FILE  # noqa: E402


@dataclass
class MetricsLog:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_map25: list = field(default_factory=list)
    val_map50: list = field(default_factory=list)


def read_metrics(path) -> MetricsLog:
    path = Path(path)
    if not path.is_file():
        raise ParseError("metrics file not found", path)
    log = MetricsLog()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != 4:
            raise ParseError(f"expected 'epoch train_loss val_map25 val_map50', got {len(tokens)} fields",
                             path, lineno)
        try:
            epoch = int(tokens[0])
            values = [float(t) for t in tokens[1:]]
        except ValueError as exc:
            raise ParseError(f"bad field: {exc}", path, lineno) from exc
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite value", path, lineno)
        if log.epochs and epoch != log.epochs[-1] + 1:
            raise ParseError(f"epoch {epoch} does not follow {log.epochs[-1]}", path, lineno)
        log.epochs.append(epoch)
        log.train_loss.append(values[0])
        log.val_map25.append(values[1])
        log.val_map50.append(values[2])
    if not log.epochs:
        raise ParseError("metrics file is empty", path)
    return log


def read_eval_summary(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
        data["mean_ap"], data["ap"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"unreadable evaluation summary: {exc}", path) from exc
    return data


@dataclass
class Run:
    name: str
    label: str
    metrics: MetricsLog
    evaluation: dict | None


def run_label(config) -> str:
    if config.attention == "none":
        label = "none"
    else:
        label = config.attention
        if not config.agnostic:
            label += "-no_agnostic"
        if not config.specific:
            label += "-no_specific"
    if not config.ddh:
        label += "-no_ddh"
    return label


def load_run(run_dir) -> Run:
    run_dir = Path(run_dir)
    metrics = read_metrics(run_dir / METRICS_FILE)
    label = run_dir.name
    if (run_dir / "config.cfg").is_file():
        label = run_label(load_config(run_dir / "config.cfg"))
    evaluation = None
    if (run_dir / EVAL_FILE).is_file():
        evaluation = read_eval_summary(run_dir / EVAL_FILE)
    return Run(run_dir.name, label, metrics, evaluation)


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.4f}"


def comparison_rows(runs: Sequence[Run]) -> list[tuple[str, list]]:
    rows = [
        ("final train loss", [r.metrics.train_loss[-1] for r in runs]),
        ("best val mAP@0.25", [max(r.metrics.val_map25) for r in runs]),
        ("best val mAP@0.5", [max(r.metrics.val_map50) for r in runs]),
    ]
    evals = [r.evaluation or {} for r in runs]
    rows.append(("eval mAP@0.25", [e.get("mean_ap", {}).get("0.25") for e in evals]))
    rows.append(("eval mAP@0.5", [e.get("mean_ap", {}).get("0.5") for e in evals]))
    rows.append(("class accuracy", [e.get("config", {}).get("class_accuracy@0.25") for e in evals]))
    rows.append(("ambiguity-pair accuracy",
                 [e.get("config", {}).get("ambiguity_accuracy@0.25") for e in evals]))
    cats = sorted({int(c) for e in evals for c in e.get("ap", {}).get("0.25", {})})
    for c in cats:
        name = CATEGORY_NAMES[c] if c < len(CATEGORY_NAMES) else f"category_{c}"
        rows.append((f"AP@0.25 {name}", [e.get("ap", {}).get("0.25", {}).get(str(c)) for e in evals]))
    return rows


def comparison_table(runs: Sequence[Run]) -> str:
    """Markdown table with one column per run."""
    header = "| metric | " + " | ".join(f"{r.label} ({r.name})" for r in runs) + " |"
    lines = [header, "|" + "---|" * (len(runs) + 1)]
    for name, values in comparison_rows(runs):
        lines.append(f"| {name} | " + " | ".join(_fmt(v) for v in values) + " |")
    return "\n".join(lines) + "\n"


def plot_loss_curves(runs: Sequence[Run], path) -> None:
    fig, (ax_loss, ax_map) = plt.subplots(1, 2, figsize=(10, 4))
    for r in runs:
        ax_loss.plot(r.metrics.epochs, r.metrics.train_loss, label=r.label)
        ax_map.plot(r.metrics.epochs, r.metrics.val_map25, label=r.label)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_loss.set_yscale("log")
    ax_map.set_xlabel("epoch")
    ax_map.set_ylabel("val mAP@0.25")
    ax_map.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_category_ap(runs: Sequence[Run], path) -> bool:
    """Grouped per-category AP@0.25 bars; False when no run was evaluated."""
    evaluated = [r for r in runs if r.evaluation]
    if not evaluated:
        return False
    cats = sorted({int(c) for r in evaluated for c in r.evaluation["ap"].get("0.25", {})})
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(cats) * len(evaluated) / 2), 4))
    width = 0.8 / len(evaluated)
    for i, r in enumerate(evaluated):
        ap = r.evaluation["ap"].get("0.25", {})
        xs = [c + i * width for c in range(len(cats))]
        ax.bar(xs, [ap.get(str(c), 0.0) for c in cats], width, label=r.label)
    ax.set_xticks([c + 0.4 - width / 2 for c in range(len(cats))])
    ax.set_xticklabels([CATEGORY_NAMES[c] if c < len(CATEGORY_NAMES) else str(c) for c in cats])
    ax.set_ylabel("AP@0.25")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return True


def report(run_dirs: Sequence, out_dir) -> list[Path]:
    """Write figures and ``summary.md`` for ``run_dirs``; returns the files written."""
    if not run_dirs:
        raise ReportError("report needs at least one run directory")
    runs = [load_run(d) for d in run_dirs]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "loss_curves.png"]
    plot_loss_curves(runs, written[0])
    if plot_category_ap(runs, out_dir / "category_ap.png"):
        written.append(out_dir / "category_ap.png")
    (out_dir / "summary.md").write_text(comparison_table(runs))
    written.append(out_dir / "summary.md")
    return written
