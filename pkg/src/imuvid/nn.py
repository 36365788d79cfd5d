"""Small neural-network layer kit on top of the autodiff core."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError


class Module:
    """Container tracking parameters and submodules by attribute assignment."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p)
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def refresh_parameter_names(self, prefix: str = "") -> None:
        """Assign each parameter its full dotted path (used in diagnostics)."""
        for name, p in self.named_parameters(prefix):
            p.name = name

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters(prefix)}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        own = dict(self.named_parameters(prefix))
        missing = sorted(set(own) - set(state))
        if missing:
            raise ConfigError(f"state dict missing parameters: {missing[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ConfigError(
                    f"parameter {name!r} shape {arr.shape} != expected {p.data.shape}"
                )
            p.data[...] = arr

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = Parameter(xavier_uniform(rng, in_dim, out_dim), name="weight")
        self.bias = Parameter(np.zeros(out_dim, dtype=np.float32), name="bias") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.weight)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gain = Parameter(np.ones(dim, dtype=np.float32), name="gain")
        self.bias = Parameter(np.zeros(dim, dtype=np.float32), name="bias")

    def forward(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, eps=self.eps)


class Dropout(Module):
    """Inverted dropout driven by the owning model's generator."""

    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1): {rate}")
        self.rate = rate
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        return ad.dropout(x, self.rate, self.rng)


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over the second-to-last axis.

    Input (..., T, D) is split into H heads of width D/H; attention mixes
    the T positions of each batch element independently.
    """

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator, dropout: float = 0.0):
        super().__init__()
        if dim % num_heads != 0:
            raise ConfigError(f"model_dim {dim} not divisible by num_heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = 1.0 / math.sqrt(self.head_dim)
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self.attn_dropout = Dropout(dropout, rng)

    def _split_heads(self, x: Tensor, batch: int, tokens: int) -> Tensor:
        x = ad.reshape(x, (batch, tokens, self.num_heads, self.head_dim))
        return ad.transpose(x, (0, 2, 1, 3))

    def forward(self, x: Tensor) -> Tensor:
        batch, tokens, _ = x.shape
        q = self._split_heads(self.wq(x), batch, tokens)
        k = self._split_heads(self.wk(x), batch, tokens)
        v = self._split_heads(self.wv(x), batch, tokens)
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), self.scale)
        weights = ad.softmax(scores, axis=-1)
        weights = self.attn_dropout(weights)
        mixed = ad.matmul(weights, v)
        mixed = ad.transpose(mixed, (0, 2, 1, 3))
        mixed = ad.reshape(mixed, (batch, tokens, self.dim))
        return self.wo(mixed)


class FeedForward(Module):
    def __init__(self, dim: int, hidden_dim: int, rng: np.random.Generator, dropout: float = 0.0):
        super().__init__()
        self.lin1 = Linear(dim, hidden_dim, rng)
        self.lin2 = Linear(hidden_dim, dim, rng)
        self.drop = Dropout(dropout, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.lin2(self.drop(ad.gelu(self.lin1(x))))


class TransformerBlock(Module):
    """Pre-norm block: x + attn(norm(x)), then x + ff(norm(x))."""

    def __init__(
        self,
        dim: int,
        num_heads: int,
        ff_dim: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, num_heads, rng, dropout=dropout)
        self.drop1 = Dropout(dropout, rng)
        self.norm2 = LayerNorm(dim)
        self.ff = FeedForward(dim, ff_dim, rng, dropout=dropout)
        self.drop2 = Dropout(dropout, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = ad.add(x, self.drop1(self.attn(self.norm1(x))))
        return ad.add(x, self.drop2(self.ff(self.norm2(x))))


class TransformerStack(Module):
    def __init__(
        self,
        dim: int,
        num_layers: int,
        num_heads: int,
        ff_dim: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.blocks = []
        for i in range(num_layers):
            block = TransformerBlock(dim, num_heads, ff_dim, rng, dropout=dropout)
            setattr(self, f"block{i}", block)
            self.blocks.append(block)

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x
