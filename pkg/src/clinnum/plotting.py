"""Figures written to files: attention heatmaps, per-class F1 bars, training curves."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .labels import ClassLabel  # noqa: E402

CLASS_NAMES = [c.name for c in ClassLabel]


def attention_heatmap(matrix: np.ndarray, tokens: Sequence[str], path, title: str = "") -> Path:
    n = len(tokens)
    size = max(4.0, 0.35 * n + 1.5)
    fig, ax = plt.subplots(figsize=(size + 1, size))
    im = ax.imshow(matrix, cmap="viridis", aspect="equal")
    ax.set_xticks(range(n), tokens, rotation=90, fontsize=7)
    ax.set_yticks(range(n), tokens, fontsize=7)
    ax.set_xlabel("key")
    ax.set_ylabel("query")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    return _save(fig, path)


def f1_bars(runs: Mapping[str, Sequence[Sequence[float]]], path, title: str = "Per-class F1 (mean ± std over seeds)") -> Path:
    """Grouped bars, one group per class, one bar per configuration."""
    names = list(runs)
    x = np.arange(len(CLASS_NAMES))
    width = 0.8 / max(len(names), 1)
    fig, ax = plt.subplots(figsize=(9, 4))
    for k, name in enumerate(names):
        arr = np.asarray(runs[name], dtype=float)
        ax.bar(x + (k - (len(names) - 1) / 2) * width, arr.mean(axis=0), width,
               yerr=arr.std(axis=0), capsize=2, label=name)
    ax.set_xticks(x, CLASS_NAMES)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("F1")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def training_curves(histories: Mapping[str, Sequence[tuple[int, float, float]]], path) -> Path:
    """``histories`` maps a run name to (epoch, train_loss, val_macro_f1) rows."""
    fig, (ax_loss, ax_f1) = plt.subplots(1, 2, figsize=(10, 4))
    for name, rows in histories.items():
        rows = np.asarray(rows, dtype=float)
        if rows.size == 0:
            continue
        ax_loss.plot(rows[:, 0], rows[:, 1], label=name)
        ax_f1.plot(rows[:, 0], rows[:, 2], label=name)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_loss.set_yscale("log")
    ax_f1.set_xlabel("epoch")
    ax_f1.set_ylabel("validation macro F1")
    ax_f1.set_ylim(0, 1.0)
    if len(histories) <= 12:
        ax_f1.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
