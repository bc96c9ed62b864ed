"""Figure rendering for the report paths of the CLI.

Every figure is written next to its delimited/JSON counterpart. Matplotlib
runs on the Agg backend so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from tagembed.evaluator import EvalReport
from tagembed.trainer import StepReport


def save_loss_figure(reports: list[StepReport], path: str) -> None:
    """Loss curve (total, contrastive, KL) over training steps."""
    steps = [r.step for r in reports]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(steps, [r.loss for r in reports], label="total", lw=1.5)
    ax.plot(steps, [r.contrastive_part for r in reports], label="contrastive", lw=1.0)
    ax.plot(steps, [r.kl_part for r in reports], label="kl", lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bench_figure(results: dict[str, dict[str, float]], path: str) -> None:
    """Bar chart of median per-step wall clock per variant."""
    variants = list(results)
    medians = [results[v]["median_step_seconds"] for v in variants]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(variants, medians, color=["tab:blue", "tab:orange", "tab:green", "tab:red"][: len(variants)])
    ax.set_ylabel("median step time (s)")
    for i, m in enumerate(medians):
        ax.text(i, m, f"{m * 1e3:.1f} ms", ha="center", va="bottom", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metrics_figure(report: EvalReport, path: str) -> None:
    """Bar chart of metric means with std error bars."""
    names = list(report.metrics)
    means = [report.metrics[n]["mean"] for n in names]
    stds = [report.metrics[n]["std"] for n in names]
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(names)), 4))
    ax.bar(range(len(names)), means, yerr=stds, capsize=3, color="tab:blue")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("value")
    ax.set_title(report.task)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
