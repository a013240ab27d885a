"""Figure rendering for evaluation and training reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import METRIC_NAMES, THRESHOLDS, EvalMetrics

_STYLE = {"hrcam": ("tab:red", "o"), "gradcam": ("tab:blue", "s"), "zhou": ("tab:green", "^")}


def save_threshold_curves(by_method: dict[str, EvalMetrics], path: str | Path) -> Path:
    """Per-threshold metric curves, one panel per metric, one line per method."""
    fig, axes = plt.subplots(2, 2, figsize=(9, 7), sharex=True)
    for ax, name in zip(axes.flat, METRIC_NAMES):
        for method, metrics in by_method.items():
            color, marker = _STYLE.get(method, ("gray", "x"))
            ax.plot(THRESHOLDS, [getattr(r, name) for r in metrics.per_threshold],
                    color=color, marker=marker, markersize=4, label=method)
        ax.set_title(name)
        ax.set_ylim(-0.02, 1.02)
        ax.grid(True, alpha=0.3)
    for ax in axes[1]:
        ax.set_xlabel("threshold")
    axes[0, 0].legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def save_loss_curves(phase1: list[float], phase2: list[float], path: str | Path) -> Path:
    """Per-epoch mean training loss for both phases."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, losses, title in zip(axes, (phase1, phase2), ("backbone", "head")):
        ax.plot(range(1, len(losses) + 1), losses, marker="o", markersize=3)
        ax.set_title(f"{title} training loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean cross entropy")
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
