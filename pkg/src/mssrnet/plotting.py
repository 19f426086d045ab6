"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
from matplotlib import pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.labelsize": 9,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, path: Path | str) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def write_gain_gap_csv(path: Path | str, stats: Dict[str, List[dict]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["critic", "iteration", "gap", "rolling_mean", "rolling_var"])
        for critic, rows in stats.items():
            for r in rows:
                w.writerow([critic, r["iteration"], f"{r['gap']:.6g}", f"{r['mean']:.6g}", f"{r['var']:.6g}"])


def plot_gain_gap(stats: Dict[str, List[dict]], path: Path | str,
                  compare: Optional[Dict[str, List[dict]]] = None, labels=("run", "comparison")) -> Path:
    """Gap between real and generated gains per critic, with rolling mean."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, max(len(stats), 1), squeeze=False, figsize=(5.0 * max(len(stats), 1), 3.2))
        for ax, (critic, rows) in zip(axes[0], sorted(stats.items())):
            it = [r["iteration"] for r in rows]
            ax.plot(it, [r["gap"] for r in rows], lw=0.6, alpha=0.4, color="C0")
            ax.plot(it, [r["mean"] for r in rows], lw=1.2, color="C0", label=labels[0])
            if compare and critic in compare:
                other = compare[critic]
                it2 = [r["iteration"] for r in other]
                ax.plot(it2, [r["gap"] for r in other], lw=0.6, alpha=0.4, color="C3")
                ax.plot(it2, [r["mean"] for r in other], lw=1.2, color="C3", label=labels[1])
                ax.legend()
            ax.set_xlabel("iteration")
            ax.set_ylabel(f"{critic} critic gain gap")
        return _save(fig, path)


def plot_ratio_violin(groups: Dict[str, Sequence[float]], path: Path | str) -> Path:
    """Violin plot of per-sentence stylistic transfer ratios."""
    names = [k for k, v in groups.items() if len(v)]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if names:
            ax.violinplot([list(groups[k]) for k in names], showmedians=True)
            ax.set_xticks(range(1, len(names) + 1), names)
        ax.set_ylim(-0.05, 1.05)
        ax.set_ylabel("transferred stylistic spans (r)")
        return _save(fig, path)


def plot_losses(history: List[dict], keys: Sequence[str], path: Path | str) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for k in keys:
            pts = [(h["iteration"], h[k]) for h in history if k in h]
            if pts:
                ax.plot(*zip(*pts), lw=1.0, label=k)
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend()
        return _save(fig, path)
