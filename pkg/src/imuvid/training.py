"""Shared pieces of the training loops: batching, schedules, progress records."""

from __future__ import annotations

import json
import warnings
from typing import Iterator, Optional, TextIO

import numpy as np

from .optim import CosineSchedule, cosine_lr


def epoch_batches(
    n_items: int, batch_size: int, rng: np.random.Generator, shuffle: bool = True
) -> Iterator[np.ndarray]:
    """Yield index batches covering all items; the last short batch is kept."""
    if n_items < batch_size:
        warnings.warn(
            f"dataset ({n_items} items) smaller than batch size {batch_size}; "
            "training with one smaller batch",
            RuntimeWarning,
        )
    order = rng.permutation(n_items) if shuffle else np.arange(n_items)
    for start in range(0, n_items, batch_size):
        yield order[start : start + batch_size]


def epoch_lr_scale(epochs: int, epoch: int) -> float:
    """Half-cosine decay sampled once per epoch, 1.0 at epoch 0."""
    if epochs <= 1:
        return 1.0
    return cosine_lr(CosineSchedule(eta_max=1.0, total_steps=epochs), epoch)


class ProgressLog:
    """Line-delimited JSON progress records written to an optional stream."""

    def __init__(self, stream: Optional[TextIO] = None):
        self.stream = stream

    def emit(self, **record) -> None:
        if self.stream is not None:
            self.stream.write(json.dumps(record) + "\n")
            self.stream.flush()
