"""Token-level per-class F1, unweighted macro F1, and multi-seed summaries."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateClassWarning
from .labels import NUM_CLASSES, ClassLabel


@dataclass(frozen=True)
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    total: int

    @classmethod
    def from_labels(cls, gold: Iterable[int], pred: Iterable[int], n_classes: int = NUM_CLASSES) -> "ConfusionCounts":
        gold = np.asarray(list(gold) if not isinstance(gold, np.ndarray) else gold, dtype=np.int64).ravel()
        pred = np.asarray(list(pred) if not isinstance(pred, np.ndarray) else pred, dtype=np.int64).ravel()
        if gold.shape != pred.shape:
            raise ValueError(f"{gold.size} gold labels vs {pred.size} predictions")
        confusion = np.bincount(gold * n_classes + pred, minlength=n_classes * n_classes)
        confusion = confusion.reshape(n_classes, n_classes)
        tp = np.diag(confusion).copy()
        fp = confusion.sum(axis=0) - tp
        fn = confusion.sum(axis=1) - tp
        return cls(tp, fp, fn, int(gold.size))

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.total + other.total)


def f1_per_class(counts: ConfusionCounts, warn: bool = True) -> np.ndarray:
    """F1 = 2TP / (2TP + FP + FN); classes with no support and no predictions score 0."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    degenerate = denom == 0
    if warn and degenerate.any():
        names = [ClassLabel(i).name for i in np.flatnonzero(degenerate)]
        warnings.warn(f"classes with no gold or predicted tokens scored 0: {names}", DegenerateClassWarning, stacklevel=2)
    return np.where(degenerate, 0.0, 2 * counts.tp / np.where(degenerate, 1, denom))


def macro_f1(per_class: Sequence[float]) -> float:
    """Unweighted mean over all classes, out-of-class included."""
    values = np.asarray(per_class, dtype=np.float64)
    return float(values.sum() / values.size)


def summarize_runs(per_run: Sequence[Sequence[float]]) -> tuple[np.ndarray, np.ndarray]:
    """Mean and (population) standard deviation of per-class F1 across seeds."""
    arr = np.asarray(per_run, dtype=np.float64)
    return arr.mean(axis=0), arr.std(axis=0)


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.2f} ± {std:.2f}"


def report_rows(runs: dict[str, Sequence[Sequence[float]]]) -> list[dict]:
    """One row per configuration: per-class "mean ± std" cells plus overall macro F1."""
    rows = []
    for name, per_run in runs.items():
        mean, std = summarize_runs(per_run)
        overall = np.array([macro_f1(r) for r in per_run])
        row = {"model": name, "seeds": len(per_run)}
        for cls in ClassLabel:
            row[cls.name] = format_mean_std(mean[cls], std[cls])
        row["macro_f1"] = format_mean_std(overall.mean(), overall.std())
        rows.append(row)
    return rows


def report_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    fields = ["model", "seeds", *[c.name for c in ClassLabel], "macro_f1"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def report_json(runs: dict[str, Sequence[Sequence[float]]]) -> str:
    out = {}
    for name, per_run in runs.items():
        mean, std = summarize_runs(per_run)
        overall = [macro_f1(r) for r in per_run]
        out[name] = {
            "seeds": len(per_run),
            "per_class": {c.name: {"mean": float(mean[c]), "std": float(std[c])} for c in ClassLabel},
            "macro_f1": {"mean": float(np.mean(overall)), "std": float(np.std(overall)), "per_seed": overall},
        }
    return json.dumps(out, indent=2)
