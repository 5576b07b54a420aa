"""Figure rendering for evaluation reports.

Writes PNG files next to the JSON/CSV/text outputs: per-structure MRR and
Hits@K bars, timing, and (when computed) cardinality error and
interpretation accuracy.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvalReport


def _bar(ax, labels, values, ylabel, title):
    x = np.arange(len(labels))
    ax.bar(x, values, color="#4878cf")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)


def render_report_figures(report: EvalReport, out_dir, include_timing: bool = True) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    structures = list(report.per_structure)

    fig, ax = plt.subplots(figsize=(8, 4.5))
    _bar(ax, structures, [report.per_structure[s].mrr for s in structures],
         "MRR (%)", "Filtered MRR by query structure")
    path = os.path.join(out_dir, "fig_mrr.png")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(8, 4.5))
    x = np.arange(len(structures))
    width = 0.8 / max(1, len(report.ks))
    for i, k in enumerate(report.ks):
        ax.bar(x + i * width, [report.per_structure[s].hits[k] for s in structures],
               width, label=f"Hits@{k}")
    ax.set_xticks(x + width * (len(report.ks) - 1) / 2)
    ax.set_xticklabels(structures, rotation=45, ha="right")
    ax.set_ylabel("Hits@K (%)")
    ax.set_title("Filtered Hits@K by query structure")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    path = os.path.join(out_dir, "fig_hits.png")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    if include_timing:
        fig, ax = plt.subplots(figsize=(8, 4.5))
        _bar(ax, structures, [report.per_structure[s].ms_per_query for s in structures],
             "ms / query", "Mean wall-clock time per query")
        path = os.path.join(out_dir, "fig_timing.png")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    if report.cardinality is not None:
        per = report.cardinality.get("per_structure", {})
        if per:
            fig, ax = plt.subplots(figsize=(8, 4.5))
            labels = list(per)
            _bar(ax, labels, [per[s] for s in labels], "MAPE (%)",
                 f"Cardinality error (threshold {report.cardinality['threshold']})")
            path = os.path.join(out_dir, "fig_cardinality.png")
            fig.tight_layout()
            fig.savefig(path, dpi=150)
            plt.close(fig)
            written.append(path)

    if report.interpretation is not None:
        acc = report.interpretation["accuracy"]
        levels = [str(level) for level in report.interpretation["ks"]]
        fig, ax = plt.subplots(figsize=(8, 4.5))
        x = np.arange(len(acc))
        width = 0.8 / max(1, len(levels))
        for i, lvl in enumerate(levels):
            label = "All" if lvl == "all" else f"Hits@{lvl}"
            heights = [acc[s][lvl] if acc[s][lvl] is not None else 0.0 for s in acc]
            ax.bar(x + i * width, heights, width, label=label)
        ax.set_xticks(x + width * (len(levels) - 1) / 2)
        ax.set_xticklabels(list(acc), rotation=45, ha="right")
        ax.set_ylabel("accuracy (%)")
        ax.set_title("Interpretation accuracy of recovered assignments")
        ax.legend()
        ax.grid(axis="y", alpha=0.3)
        path = os.path.join(out_dir, "fig_interpretation.png")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    return written
