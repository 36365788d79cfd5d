"""Classification and retrieval metrics, plus the aggregated report container.

``rankings`` arguments are (N, C) integer arrays: row i lists class ids from
most to least similar for query i. All metrics lie in [0, 1].
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputError, UsageError


def _as_int_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.size == 0:
        raise InputError(f"{name} must be non-empty")
    return arr


def per_class_recalls(preds, labels) -> dict[int, float]:
    preds = _as_int_array(preds, "preds")
    labels = _as_int_array(labels, "labels")
    if preds.shape != labels.shape:
        raise UsageError(f"preds shape {preds.shape} != labels shape {labels.shape}")
    out = {}
    for c in np.unique(labels):
        mask = labels == c
        out[int(c)] = float((preds[mask] == c).mean())
    return out


def balanced_accuracy(preds, labels, num_classes: Optional[int] = None) -> float:
    """Mean per-class recall over classes present in ``labels``.

    If ``num_classes`` announces a larger class universe, classes with zero
    samples are excluded with a warning.
    """
    recalls = per_class_recalls(preds, labels)
    if num_classes is not None and len(recalls) < num_classes:
        missing = sorted(set(range(num_classes)) - set(recalls))
        warnings.warn(
            f"classes {missing} have no samples; excluded from balanced accuracy",
            RuntimeWarning,
        )
    return float(np.mean(list(recalls.values())))


def macro_f1(preds, labels) -> float:
    """Unweighted mean of per-class F1 over classes present in ``labels``."""
    preds = _as_int_array(preds, "preds")
    labels = _as_int_array(labels, "labels")
    scores = []
    for c in np.unique(labels):
        tp = float(np.sum((preds == c) & (labels == c)))
        fp = float(np.sum((preds == c) & (labels != c)))
        fn = float(np.sum((preds != c) & (labels == c)))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores))


def ranks_of_true(rankings, labels) -> np.ndarray:
    """1-based position of the true class in each ranking row."""
    rankings = _as_int_array(rankings, "rankings")
    labels = _as_int_array(labels, "labels")
    if rankings.ndim != 2 or rankings.shape[0] != labels.shape[0]:
        raise UsageError(
            f"rankings shape {rankings.shape} incompatible with labels shape {labels.shape}"
        )
    hits = rankings == labels[:, None]
    if not hits.any(axis=1).all():
        bad = int(np.argmin(hits.any(axis=1)))
        raise InputError(f"ranking row {bad} does not contain its true class {labels[bad]}")
    return hits.argmax(axis=1) + 1


def recall_at_k(rankings, labels, k: int) -> float:
    """Fraction of queries whose true class sits within the top k ranks."""
    ranks = ranks_of_true(rankings, labels)
    num_classes = np.asarray(rankings).shape[1]
    if k > num_classes:
        warnings.warn(f"k={k} exceeds {num_classes} classes; clamping", RuntimeWarning)
        k = num_classes
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    return float((ranks <= k).mean())


def mrr(rankings, labels) -> float:
    """Mean reciprocal (1-based) rank of the true class."""
    return float((1.0 / ranks_of_true(rankings, labels)).mean())


def confusion_counts(preds, labels, num_classes: int) -> np.ndarray:
    """(C, C) matrix of counts; rows are true classes, columns predictions."""
    preds = _as_int_array(preds, "preds")
    labels = _as_int_array(labels, "labels")
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(out, (labels, preds), 1)
    return out


METRIC_NAMES = ("balanced_accuracy", "macro_f1", "mrr", "recall_at_1", "recall_at_3")


def compute_all_metrics(preds, labels, rankings) -> dict[str, float]:
    """The full Table-2 style suite for one evaluation run."""
    return {
        "balanced_accuracy": balanced_accuracy(preds, labels),
        "macro_f1": macro_f1(preds, labels),
        "mrr": mrr(rankings, labels),
        "recall_at_1": recall_at_k(rankings, labels, 1),
        "recall_at_3": recall_at_k(rankings, labels, 3),
    }


@dataclass
class MetricsReport:
    """Mean +/- std of each metric over protocol repeats, plus diagnostics.

    ``std`` is the population standard deviation over repeats (0 for a single
    repeat). ``details`` carries protocol instrumentation such as the sampled
    ids per repeat.
    """

    per_repeat: dict[str, list[float]]
    per_class_recall: dict[int, float] = field(default_factory=dict)
    confusion: Optional[np.ndarray] = None
    details: dict = field(default_factory=dict)

    def mean(self, metric: str) -> float:
        return float(np.mean(self.per_repeat[metric]))

    def std(self, metric: str) -> float:
        return float(np.std(self.per_repeat[metric]))

    def summary(self) -> dict[str, dict[str, float]]:
        return {
            name: {"mean": self.mean(name), "std": self.std(name)}
            for name in self.per_repeat
        }

    def to_dict(self) -> dict:
        out = {
            "metrics": {
                name: {
                    "mean": self.mean(name),
                    "std": self.std(name),
                    "per_repeat": [float(v) for v in self.per_repeat[name]],
                }
                for name in self.per_repeat
            },
            "per_class_recall": {str(k): v for k, v in self.per_class_recall.items()},
        }
        if self.confusion is not None:
            out["confusion"] = self.confusion.tolist()
        if self.details:
            out["details"] = self.details
        return out

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def to_table(self, sep: str = "\t") -> str:
        """Delimited table (metric, mean, std, repeats...) for plotting tools."""
        lines = [sep.join(["metric", "mean", "std", "repeats"])]
        for name in self.per_repeat:
            repeats = ",".join(f"{v:.6f}" for v in self.per_repeat[name])
            lines.append(
                sep.join([name, f"{self.mean(name):.6f}", f"{self.std(name):.6f}", repeats])
            )
        return "\n".join(lines)

    @staticmethod
    def from_runs(
        runs: Sequence[dict[str, float]],
        per_class_recall: Optional[dict[int, float]] = None,
        confusion: Optional[np.ndarray] = None,
        details: Optional[dict] = None,
    ) -> "MetricsReport":
        if not runs:
            raise UsageError("at least one repeat is required")
        names = list(runs[0])
        per_repeat = {name: [float(r[name]) for r in runs] for name in names}
        return MetricsReport(
            per_repeat=per_repeat,
            per_class_recall=per_class_recall or {},
            confusion=confusion,
            details=details or {},
        )
