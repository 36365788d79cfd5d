"""Brute-force reference implementations of every metric.

Deliberately naive pure-Python loops, kept independent of ``metrics`` so the
two can be cross-checked (the verification suite compares them on random
inputs to 1e-12).
"""

from __future__ import annotations


def balanced_accuracy_reference(preds, labels) -> float:
    preds = list(preds)
    labels = list(labels)
    classes = sorted(set(labels))
    recalls = []
    for c in classes:
        correct = 0
        total = 0
        for p, y in zip(preds, labels):
            if y == c:
                total += 1
                if p == c:
                    correct += 1
        recalls.append(correct / total)
    return sum(recalls) / len(recalls)


def macro_f1_reference(preds, labels) -> float:
    preds = list(preds)
    labels = list(labels)
    classes = sorted(set(labels))
    scores = []
    for c in classes:
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, labels) if p != c and y == c)
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom > 0 else 0.0)
    return sum(scores) / len(scores)


def _rank_reference(ranking_row, true_class) -> int:
    for position, cls in enumerate(ranking_row, start=1):
        if cls == true_class:
            return position
    raise ValueError(f"true class {true_class} missing from ranking {list(ranking_row)}")


def mrr_reference(rankings, labels) -> float:
    total = 0.0
    count = 0
    for row, y in zip(rankings, labels):
        total += 1.0 / _rank_reference(row, y)
        count += 1
    return total / count


def recall_at_k_reference(rankings, labels, k) -> float:
    hits = 0
    count = 0
    for row, y in zip(rankings, labels):
        k_eff = min(k, len(list(row)))
        if _rank_reference(row, y) <= k_eff:
            hits += 1
        count += 1
    return hits / count
