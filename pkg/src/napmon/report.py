"""Report writing: key-value summaries, delimited records, and figures.

Figures are rendered to files next to the delimited output (matplotlib,
Agg backend); callers opt out with ``figures=False`` in the CLI.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import BenchRow
from .metrics import auroc
from .odtest import ODTestReport


def format_report(report: ODTestReport) -> str:
    """Key-value summary plus a human-readable per-layer table."""
    lines = []
    for key, value in report.summary_fields().items():
        if value is None:
            lines.append(f"{key}=NA")
        elif isinstance(value, float):
            lines.append(f"{key}={value:.6f}")
        else:
            lines.append(f"{key}={value}")
    lines.append("")
    header = (
        f"{'layer':<16} {'kind':<6} {'p':>5} {'pool':<5} {'tau':>5} "
        f"{'tau_scaled':>10} {'bits':>6} {'val_acc':>8} {'unique':>8}"
    )
    lines.append(header)
    lines.append("-" * len(header))
    for d in report.layers:
        lines.append(
            f"{d.name:<16} {d.kind:<6} {d.p:>5g} {d.pool_type:<5} {d.tau:>5} "
            f"{d.tau_scaled:>10.4f} {d.bit_len:>6} {d.val_accuracy:>8.4f} "
            f"{d.unique_patterns:>8}"
        )
    return "\n".join(lines) + "\n"


def write_report(report: ODTestReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report(report))
    return path


def write_verdict_records(report: ODTestReport, path: str | Path) -> Path:
    """Per-sample line-delimited records for the balanced test evaluation.

    Scheme 2 has no score column; the verdict column is always present.
    """
    path = Path(path)
    lines = ["index,label,score,verdict"]
    labels = report.test_labels
    scores = report.test_scores
    verdicts = report.test_verdicts
    if labels is not None and verdicts is not None:
        for i, label in enumerate(labels):
            score_txt = "" if scores is None else f"{scores[i]:.9f}"
            lines.append(
                f"{i},{'ood' if label else 'id'},{score_txt},"
                f"{'ood' if verdicts[i] else 'id'}"
            )
    path.write_text("\n".join(lines) + "\n")
    return path


def _roc_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(-scores, kind="stable")
    labels = labels[order]
    tps = np.cumsum(labels)
    fps = np.cumsum(~labels)
    tpr = np.concatenate([[0], tps / labels.sum()])
    fpr = np.concatenate([[0], fps / (~labels).sum()])
    return fpr, tpr


def render_report_figures(report: ODTestReport, prefix: str | Path) -> list[Path]:
    """Figures alongside the report: score histogram, ROC, layer distances."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    out: list[Path] = []

    if report.test_scores is not None and report.test_labels is not None:
        scores, labels = report.test_scores, report.test_labels
        fig, ax = plt.subplots(figsize=(6, 4))
        bins = np.histogram_bin_edges(scores, bins=40)
        ax.hist(scores[~labels], bins=bins, alpha=0.6, label="ID (held out)")
        ax.hist(scores[labels], bins=bins, alpha=0.6, label="OOD (test)")
        ax.axvline(0.0, color="k", lw=1, ls="--", label="decision cut")
        ax.set_xlabel("uncertainty score")
        ax.set_ylabel("samples")
        ax.legend()
        ax.set_title("Test score distribution")
        fig.tight_layout()
        p = prefix.with_name(prefix.name + "_scores.png")
        fig.savefig(p, dpi=120)
        plt.close(fig)
        out.append(p)

        fpr, tpr = _roc_points(scores, labels)
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        ax.plot(fpr, tpr, lw=1.5)
        ax.plot([0, 1], [0, 1], "k--", lw=0.8)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_title(f"ROC (AUROC = {auroc(scores, labels):.4f})")
        fig.tight_layout()
        p = prefix.with_name(prefix.name + "_roc.png")
        fig.savefig(p, dpi=120)
        plt.close(fig)
        out.append(p)

    if report.val_distances:
        k = len(report.val_distances)
        fig, axes = plt.subplots(1, k, figsize=(4 * k, 3.2), squeeze=False)
        for ax, (name, (d_in, d_out)) in zip(axes[0], report.val_distances.items()):
            hi = max(int(d_in.max()), int(d_out.max()), 1)
            bins = np.arange(0, hi + 2) - 0.5
            ax.hist(d_in, bins=bins, alpha=0.6, label="ID (train, LOO)")
            ax.hist(d_out, bins=bins, alpha=0.6, label="OOD (valid)")
            diag = next(d for d in report.layers if d.name == name)
            ax.axvline(diag.tau + 0.5, color="k", lw=1, ls="--", label=f"tau={diag.tau}")
            ax.set_title(name)
            ax.set_xlabel("nearest Hamming distance")
            ax.legend(fontsize=8)
        fig.tight_layout()
        p = prefix.with_name(prefix.name + "_layers.png")
        fig.savefig(p, dpi=120)
        plt.close(fig)
        out.append(p)
    return out


def write_bench_csv(rows: Sequence[BenchRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [BenchRow.csv_header()] + [r.csv_line() for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def render_bench_figure(rows: Sequence[BenchRow], path: str | Path) -> Path:
    """Latency vs store size, one line per bit length."""
    path = Path(path)
    nearest = [r for r in rows if r.kind == "nearest"]
    fig, ax = plt.subplots(figsize=(6, 4))
    for bits in sorted({r.bit_len for r in nearest}):
        series = sorted((r for r in nearest if r.bit_len == bits), key=lambda r: r.store_size)
        ax.plot(
            [r.store_size for r in series],
            [r.mean_s * 1e3 for r in series],
            marker="o",
            label=f"{bits}-bit",
        )
    judge_rows = [r for r in rows if r.kind == "judge"]
    for r in judge_rows:
        ax.axhline(r.mean_s * 1e3, ls=":", color="gray")
        ax.annotate(
            f"judge k={r.layers} ({r.store_size} x {r.bit_len}b)",
            xy=(0.02, r.mean_s * 1e3),
            fontsize=8,
            color="gray",
        )
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("store size (patterns)")
    ax.set_ylabel("mean latency per query (ms)")
    ax.set_title("Nearest-distance scan latency")
    if nearest:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
