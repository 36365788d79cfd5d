"""AdamW with decoupled weight decay and a half-cosine learning-rate schedule."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Parameter
from .errors import ConfigError, NonFiniteGradientError


@dataclass
class CosineSchedule:
    """eta(t) = eta_min + 0.5*(eta_max - eta_min)*(1 + cos(pi*t/total_steps))."""

    eta_max: float
    total_steps: int
    eta_min: float = 0.0

    def __post_init__(self):
        if self.eta_max < 0 or self.eta_min < 0:
            raise ConfigError("learning rates must be nonnegative")
        if self.total_steps <= 0:
            raise ConfigError("total_steps must be positive")

    def __call__(self, t: float) -> float:
        return cosine_lr(self, t)


def cosine_lr(schedule: CosineSchedule, t: float) -> float:
    """Evaluate the schedule at step ``t``; out-of-range t is clamped with a warning."""
    if t < 0 or t > schedule.total_steps:
        warnings.warn(
            f"cosine_lr step {t} outside [0, {schedule.total_steps}]; clamping",
            RuntimeWarning,
        )
        t = min(max(t, 0), schedule.total_steps)
    span = schedule.eta_max - schedule.eta_min
    return schedule.eta_min + 0.5 * span * (1.0 + math.cos(math.pi * t / schedule.total_steps))


class AdamW:
    """AdamW over one or more parameter groups.

    Groups follow the familiar optimizer-group convention: each group is a
    dict with ``params`` plus optional per-group overrides of ``lr`` and
    ``weight_decay``. Learning rates may be rescaled between steps via
    ``set_lr_scale`` (used by the cosine schedule) without touching the
    group's base rate.
    """

    def __init__(
        self,
        params: Iterable[Parameter] | Sequence[dict],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if not 0.0 <= betas[0] < 1.0 or not 0.0 <= betas[1] < 1.0:
            raise ConfigError(f"betas must lie in [0, 1): {betas}")
        if eps <= 0:
            raise ConfigError("eps must be positive")
        if weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")

        params = list(params)
        if params and isinstance(params[0], dict):
            groups = params
        else:
            groups = [{"params": params}]
        self.groups = []
        for g in groups:
            self.groups.append(
                {
                    "params": list(g["params"]),
                    "lr": float(g.get("lr", lr)),
                    "weight_decay": float(g.get("weight_decay", weight_decay)),
                }
            )
        self.betas = betas
        self.eps = eps
        self.lr_scale = 1.0
        self.step_count = 0
        # first/second moment buffers, keyed per parameter object
        self._m = {id(p): np.zeros_like(p.data) for g in self.groups for p in g["params"]}
        self._v = {id(p): np.zeros_like(p.data) for g in self.groups for p in g["params"]}

    def parameters(self) -> list[Parameter]:
        return [p for g in self.groups for p in g["params"]]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def set_lr_scale(self, scale: float) -> None:
        """Multiply every group's base learning rate by ``scale`` for coming steps."""
        self.lr_scale = float(scale)

    def step(self) -> None:
        """Apply one AdamW update to every parameter.

        value <- value - lr*(m_hat/(sqrt(v_hat)+eps) + weight_decay*value),
        with bias-corrected moments. A non-finite gradient aborts the step
        before any parameter is touched.
        """
        for p in self.parameters():
            if p.grad is None or not np.isfinite(p.grad).all():
                bad = "missing" if p.grad is None else "non-finite"
                raise NonFiniteGradientError(
                    f"step {self.step_count + 1} aborted: {bad} gradient for "
                    f"parameter {p.name!r} (shape {p.data.shape})"
                )
        self.step_count += 1
        beta1, beta2 = self.betas
        bc1 = 1.0 - beta1**self.step_count
        bc2 = 1.0 - beta2**self.step_count
        for g in self.groups:
            lr = g["lr"] * self.lr_scale
            wd = g["weight_decay"]
            for p in g["params"]:
                grad = p.grad
                m = self._m[id(p)]
                v = self._v[id(p)]
                m *= beta1
                m += (1.0 - beta1) * grad
                v *= beta2
                v += (1.0 - beta2) * grad * grad
                m_hat = m / bc1
                v_hat = v / bc2
                update = m_hat / (np.sqrt(v_hat) + self.eps)
                if wd != 0.0:
                    update = update + wd * p.data
                p.data -= (lr * update).astype(p.data.dtype, copy=False)
