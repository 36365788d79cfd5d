"""Finite-difference verification of reverse-mode gradients.

The checker runs in float64: central differences with h=1e-5 carry an
O(h^2) truncation error, far below the 1e-4 relative tolerance, but only if
the forward pass itself is evaluated in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, backward, tensor_sum, mul

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4


@dataclass
class GradCheckReport:
    """Outcome of one gradient check."""

    passed: bool
    max_rel_error: float
    worst_input: int = -1
    worst_index: tuple = ()
    analytic: float = 0.0
    numeric: float = 0.0
    per_input: list = field(default_factory=list)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"gradcheck {status}: max relative error {self.max_rel_error:.3e} "
            f"(input {self.worst_input}, index {self.worst_index}, "
            f"analytic {self.analytic:.6e}, numeric {self.numeric:.6e})"
        )


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    # absolute comparison once both gradients are effectively zero
    denom = np.where(scale > 1e-6, scale, 1.0)
    return np.abs(analytic - numeric) / denom


def grad_check(
    fn: Callable[..., Tensor],
    input_shapes: Sequence[tuple],
    tolerance: float = DEFAULT_TOLERANCE,
    step: float = DEFAULT_STEP,
    seed: int = 0,
    inputs: Sequence[np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn`` against central differences.

    ``fn`` maps one Tensor per shape in ``input_shapes`` to a Tensor of any
    shape; the output is reduced to a scalar with a fixed random weighting so
    every output element influences the check. Returns a report with the
    worst element rather than raising, so a violation is a test failure, not
    a crash.
    """
    rng = np.random.default_rng(seed)
    if inputs is None:
        inputs = [rng.standard_normal(s) for s in input_shapes]
    tensors = [Tensor(np.asarray(x, dtype=np.float64), requires_grad=True) for x in inputs]

    out = fn(*tensors)
    weights = Tensor(rng.standard_normal(out.shape).astype(np.float64))
    loss = tensor_sum(mul(out, weights))
    backward(loss)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    def scalar_loss() -> float:
        res = fn(*[Tensor(t.data) for t in tensors])
        return float((res.data * weights.data).sum())

    report = GradCheckReport(passed=True, max_rel_error=0.0)
    for i, t in enumerate(tensors):
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = scalar_loss()
            flat[j] = orig - step
            f_minus = scalar_loss()
            flat[j] = orig
            num_flat[j] = (f_plus - f_minus) / (2.0 * step)
        rel = _relative_error(analytic[i], numeric)
        worst = np.unravel_index(np.argmax(rel), rel.shape) if rel.size else ()
        worst_err = float(rel[worst]) if rel.size else 0.0
        report.per_input.append(worst_err)
        if worst_err > report.max_rel_error:
            report.max_rel_error = worst_err
            report.worst_input = i
            report.worst_index = tuple(int(k) for k in worst)
            report.analytic = float(analytic[i][worst])
            report.numeric = float(numeric[worst])
    report.passed = report.max_rel_error <= tolerance
    return report
