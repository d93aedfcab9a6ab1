"""Report rendering: delimited output plus matplotlib figures on disk.

Every reporting CLI path can emit a directory containing CSV files next to
PNG figures (confusion heatmap, per-class accuracy bars, before/after
forgetting bars).
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .learner import EvalReport, ForgettingReport


def save_eval_report(report: EvalReport, outdir) -> list[Path]:
    """Write confusion.csv, per_class.csv, and the matching figures."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    path = outdir / "confusion.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + report.class_names)
        for name, row in zip(report.class_names, report.confusion):
            w.writerow([name] + [int(v) for v in row])
    written.append(path)

    path = outdir / "per_class.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "accuracy"])
        for name, acc in report.per_class_accuracy.items():
            w.writerow([name, f"{acc:.6f}"])
        w.writerow(["overall", f"{report.overall_accuracy:.6f}"])
    written.append(path)

    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    im = ax.imshow(report.confusion, cmap="Blues")
    ax.set_xticks(range(len(report.class_names)), report.class_names,
                  rotation=45, ha="right")
    ax.set_yticks(range(len(report.class_names)), report.class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(report.confusion.shape[0]):
        for j in range(report.confusion.shape[1]):
            v = int(report.confusion[i, j])
            if v:
                ax.text(j, i, str(v), ha="center", va="center", fontsize=8)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    path = outdir / "confusion.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    names = list(report.per_class_accuracy)
    accs = [report.per_class_accuracy[n] for n in names]
    ax.bar(names, accs, color="#4878a8")
    ax.axhline(report.overall_accuracy, color="#333", ls="--", lw=1,
               label=f"overall {report.overall_accuracy:.3f}")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy")
    ax.legend(frameon=False)
    plt.setp(ax.get_xticklabels(), rotation=30, ha="right")
    fig.tight_layout()
    path = outdir / "per_class_accuracy.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def save_forgetting_report(report: ForgettingReport, outdir) -> list[Path]:
    """Write forgetting.csv and a before/after bar figure."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    path = outdir / "forgetting.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "before", "after", "drop"])
        for name in report.before:
            w.writerow([name, f"{report.before[name]:.6f}",
                        f"{report.after[name]:.6f}",
                        f"{report.drops[name]:.6f}"])
        w.writerow([report.new_class, "", f"{report.new_class_accuracy:.6f}", ""])
    written.append(path)

    names = list(report.before)
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(x - 0.2, [report.before[n] for n in names], width=0.4,
           label="before", color="#888")
    ax.bar(x + 0.2, [report.after[n] for n in names], width=0.4,
           label="after", color="#4878a8")
    ax.set_xticks(x, names, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy")
    ax.set_title(
        f"max drop {report.max_drop:.3f}; "
        f"new class '{report.new_class}' {report.new_class_accuracy:.3f}"
    )
    ax.legend(frameon=False)
    fig.tight_layout()
    path = outdir / "forgetting.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
