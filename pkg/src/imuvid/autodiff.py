"""Dense-tensor compute layer with reverse-mode differentiation.

Tensors wrap contiguous row-major numpy arrays (float32 by default, float64
for gradient checking). Every operation records a closure that propagates the
output gradient to its inputs; ``backward`` runs the closures in reverse
topological order and accumulates into leaf gradients.

Conventions:
  * Values produced by ops are treated as immutable.
  * Reductions use a fixed sequential order, so two runs with the same seed
    produce bitwise-identical results in single-threaded execution.
  * ``set_debug_checks(True)`` (or IMUVID_DEBUG=1) asserts that every forward
    output is finite.
"""

from __future__ import annotations

import math
import os
import warnings
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ShapeMismatchError, UsageError

_grad_enabled = True
_debug_checks = os.environ.get("IMUVID_DEBUG", "0") not in ("", "0")


def set_debug_checks(enabled: bool) -> None:
    """Toggle finite-value assertions on every forward op output."""
    global _debug_checks
    _debug_checks = bool(enabled)


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense array plus an optional position in the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, np.ndarray):
            arr = data if dtype is None else data.astype(dtype)
        else:
            arr = np.asarray(data, dtype=np.float32 if dtype is None else dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        # ascontiguousarray would promote 0-d arrays to 1-d; keep scalars 0-d
        self.data: np.ndarray = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # -- array-ish properties -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def to_numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A learnable tensor: named, with a persistent gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter(name={self.name!r}, shape={self.data.shape}, dtype={self.data.dtype})"


# -- graph plumbing -----------------------------------------------------------


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _from_op(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if _debug_checks and not np.isfinite(data).all():
        raise FloatingPointError("non-finite value produced by a forward op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Populate gradients of every reachable leaf from a scalar loss.

    Gradients accumulate into ``Parameter.grad`` buffers; intermediate graph
    state is released afterwards so a graph can be backpropagated only once.
    """
    if loss.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        # release the graph; leaves keep their accumulated gradients
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node.grad = None


# -- elementwise and arithmetic ops -------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    out = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _from_op(out, (a, b), bwd)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    out = a.data - b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _from_op(out, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    out = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _from_op(out, (a, b), bwd)


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    out = a.data / b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _from_op(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, -g)

    return _from_op(-a.data, (a,), bwd)


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out = a.data**exponent

    def bwd(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _from_op(out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g):
        _accumulate(a, g * out)

    return _from_op(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def bwd(g):
        _accumulate(a, g / a.data)

    return _from_op(out, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def bwd(g):
        _accumulate(a, g * 0.5 / out)

    return _from_op(out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g):
        _accumulate(a, g * (1.0 - out * out))

    return _from_op(out, (a,), bwd)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation x*Phi(x)."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    out = 0.5 * x * (1.0 + t)

    def bwd(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        dx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        _accumulate(a, g * dx)

    return _from_op(out, (a,), bwd)


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed without overflow on large |x|."""
    x = a.data
    out = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)

    def bwd(g):
        sig = np.empty_like(x)
        pos = x >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        sig[~pos] = ex / (1.0 + ex)
        _accumulate(a, g * sig)

    return _from_op(out, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Normalized exponentials along ``axis``, max-subtracted for stability."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - dot))

    return _from_op(out, (a,), bwd)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bwd(g):
        p = np.exp(out)
        _accumulate(a, g - p * g.sum(axis=axis, keepdims=True))

    return _from_op(out, (a,), bwd)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout. Pass-through when rate == 0."""
    if rate <= 0.0:
        return a
    keep = 1.0 - rate
    mask = (rng.random(a.data.shape, dtype=np.float32) < keep).astype(a.data.dtype) / keep
    out = a.data * mask

    def bwd(g):
        _accumulate(a, g * mask)

    return _from_op(out, (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=lead))
        _accumulate(bias, g.sum(axis=lead))
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * (dxhat - m1 - xhat * m2))

    return _from_op(out, (x, gain, bias), bwd)


# -- shape ops ----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy-style batch broadcasting."""
    if not isinstance(b, Tensor):
        b = _as_tensor(b, a.dtype)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(
            f"matmul requires >=2-d operands, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(
            f"matmul inner dimensions disagree: {a.shape} vs {b.shape}"
        )
    try:
        out = a.data @ b.data
    except ValueError as err:  # non-broadcastable batch dims
        raise ShapeMismatchError(
            f"matmul batch dimensions not broadcastable: {a.shape} vs {b.shape}"
        ) from err

    def bwd(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        _accumulate(a, _unbroadcast(ga, a.data.shape))
        _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _from_op(out, (a, b), bwd)


def pairwise_dot(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs inner products: out[i, j] = <a_i, b_j>.

    The forward contraction uses ``einsum`` (fixed per-element summation
    order), so an entry's value depends only on the two rows involved; jointly
    permuting the rows of ``a`` and ``b`` permutes the output bitwise.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatchError(
            f"pairwise_dot expects (N, D) and (M, D), got {a.shape} and {b.shape}"
        )
    out = np.einsum("ik,jk->ij", a.data, b.data)

    def bwd(g):
        _accumulate(a, g @ b.data)
        _accumulate(b, g.T @ a.data)

    return _from_op(out, (a, b), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _from_op(out, (a,), bwd)


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.ascontiguousarray(a.data.transpose(axes))
    inv = None if axes is None else np.argsort(axes)

    def bwd(g):
        _accumulate(a, g.transpose(inv) if inv is not None else g.transpose())

    return _from_op(out, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            _accumulate(t, g[tuple(idx)])

    return _from_op(out, tuple(tensors), bwd)


def _index_may_repeat(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (np.ndarray, list)) for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    out = np.ascontiguousarray(a.data[idx])

    def bwd(g):
        full = np.zeros_like(a.data)
        if _index_may_repeat(idx):
            np.add.at(full, idx, g)  # repeated fancy indices must accumulate
        else:
            full[idx] = g
        _accumulate(a, full)

    return _from_op(out, (a,), bwd)


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = np.broadcast_to(a.data, shape).copy()

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))

    return _from_op(out, (a,), bwd)


# -- reductions ---------------------------------------------------------------


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _from_op(np.asarray(out), (a,), bwd)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g / count, a.data.shape).copy())

    return _from_op(np.asarray(out), (a,), bwd)


def exact_sum(a: Tensor) -> Tensor:
    """Full reduction via compensated summation (``math.fsum``).

    The result depends only on the multiset of elements, never on their
    layout, which makes downstream quantities exactly invariant under
    permutations of the input.
    """
    total = math.fsum(a.data.ravel().tolist())
    out = np.asarray(total, dtype=a.data.dtype)

    def bwd(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape).astype(a.data.dtype).copy())

    return _from_op(out, (a,), bwd)


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale vectors along ``axis`` to unit Euclidean norm.

    ``eps`` keeps the op finite on an all-zero vector (a warning is emitted,
    since that signals a degenerate projection).
    """
    sq = tensor_sum(mul(a, a), axis=axis, keepdims=True)
    norm = sqrt(sq)
    if np.any(norm.data < 1e-8):
        warnings.warn("l2_normalize received a (near-)zero vector", RuntimeWarning)
    return div(a, add(norm, eps))


__all__ = [
    "Tensor",
    "Parameter",
    "backward",
    "no_grad",
    "set_debug_checks",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "gelu",
    "softplus",
    "softmax",
    "log_softmax",
    "dropout",
    "layer_norm",
    "matmul",
    "pairwise_dot",
    "reshape",
    "transpose",
    "concat",
    "getitem",
    "broadcast_to",
    "tensor_sum",
    "tensor_mean",
    "exact_sum",
    "l2_normalize",
]
