"""Figures written next to the tabular outputs (PNG, non-interactive backend)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def figure_size(width: float = 6.0, ratio: float | None = None) -> tuple[float, float]:
    ratio = ratio or (math.sqrt(5) - 1) / 2
    return width, width * ratio


def plot_comparison(comparison, path, title: str | None = None) -> Path:
    """Bar chart of group means with std error bars, one panel per (setting, split)."""
    panels: dict[tuple[str, str], list] = {}
    for r in comparison.rows:
        panels.setdefault((r.setting, r.split), []).append(r)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 3.0), squeeze=False)
        for ax, ((setting, split), rows) in zip(axes[0], panels.items()):
            x = range(len(rows))
            ax.bar(x, [r.mean for r in rows], yerr=[r.std for r in rows], capsize=3,
                   color="0.6", edgecolor="0.2", linewidth=0.6)
            ax.set_xticks(list(x))
            ax.set_xticklabels([r.group for r in rows])
            ax.set_title(" / ".join(s for s in (setting, split) if s))
            lo = min(r.mean - r.std for r in rows)
            ax.set_ylim(max(0.0, lo - 5), min(100.0, max(r.mean + r.std for r in rows) + 2))
            ax.set_ylabel("macro F1 (%)")
        if title:
            fig.suptitle(title)
        path = Path(path)
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_dev_curves(curves: dict[str, Sequence[float]], path, selected: dict[str, int] | None = None) -> Path:
    """Per-epoch dev macro-F1 for each seed; the selected epoch is circled."""
    selected = selected or {}
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figure_size(4.5))
        for name, ys in curves.items():
            epochs = list(range(1, len(ys) + 1))
            (line,) = ax.plot(epochs, [100 * y for y in ys], marker=".", label=name)
            if name in selected:
                k = selected[name]
                ax.plot([k], [100 * ys[k - 1]], "o", mfc="none", ms=9, color=line.get_color())
        ax.set_xlabel("epoch")
        ax.set_ylabel("dev macro F1 (%)")
        ax.legend(frameon=False)
        path = Path(path)
        fig.savefig(path)
        plt.close(fig)
    return path
