"""Figures written next to the CSV reports. Uses the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def label_counts(counts: Sequence[tuple[str, int]], path: str | Path, title: str = "Samples per label") -> Path:
    names = [n for n, _ in counts]
    values = [c for _, c in counts]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * len(names) + 2), 3.5))
    ax.bar(np.arange(len(names)), values, color="tab:blue")
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("samples")
    ax.set_title(title)
    return _save(fig, path)


def elimination_trace(rounds: Sequence, path: str | Path) -> Path:
    """Score and dimension per elimination round (rows with ``round``, ``score``, ``dimension``)."""
    r = [row.round for row in rounds]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(r, [row.score for row in rounds], marker="o", color="tab:blue")
    ax.set_xlabel("round")
    ax.set_ylabel("score", color="tab:blue")
    ax2 = ax.twinx()
    ax2.step(r, [row.dimension for row in rounds], where="mid", color="tab:gray")
    ax2.set_ylabel("dimension", color="tab:gray")
    ax.set_title("Backward elimination")
    return _save(fig, path)


def grid_scores(labels: Sequence[str], scores: Sequence[float], path: str | Path, metric: str = "score") -> Path:
    s = np.asarray(scores, dtype=float)
    fig, ax = plt.subplots(figsize=(6, max(2.5, 0.25 * len(labels) + 1)))
    y = np.arange(len(labels))
    ax.barh(y, np.nan_to_num(s, nan=0.0), color=np.where(np.isnan(s), "tab:red", "tab:blue"))
    ax.set_yticks(y)
    ax.set_yticklabels(labels, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel(metric)
    ax.set_title("Grid search (NaN rows in red)")
    return _save(fig, path)


def per_label_f1(names: Sequence[str], f1: Sequence[float], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * len(names) + 2), 3.5))
    ax.bar(np.arange(len(names)), f1, color="tab:green")
    ax.set_ylim(0, 1.05)
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("F1")
    ax.set_title("Per-class F1")
    return _save(fig, path)
