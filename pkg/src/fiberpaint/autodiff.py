"""Reverse-mode automatic differentiation over dense numpy arrays.

Only the operations the inpainting networks actually need live here:
elementwise arithmetic, a few transcendentals, reductions, the affine map,
and the structural ops (reshape, paste, detach).  Convolution and batch
normalization are in layers.py.  Every op records a closure on its output
tensor; ``Tensor.backward`` releases them once in reverse topological
order.  Training runs in float32; wrap gradient checks in
``precision("float64")`` for a 64-bit graph.
"""

from __future__ import annotations

import contextlib
from typing import Callable

import numpy as np

from .errors import ContractError, NumericalError

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True
_CHECK_FINITE = False


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype newly created tensors default to."""
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


@contextlib.contextmanager
def no_grad():
    """Disable graph recording for evaluation-mode forward passes."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def set_debug_checks(enabled: bool) -> None:
    """Toggle the NaN/Inf guard that runs after every forward op."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    """A dense array plus the bookkeeping for reverse-mode gradients.

    ``requires_grad`` leaves are created with a zero gradient so that
    leaves a loss never touches still report an all-zero gradient after
    ``backward``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_prev", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self.name = name
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None
        self._consumed = False

    @classmethod
    def _op(cls, data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        if _CHECK_FINITE and not np.all(np.isfinite(data)):
            raise NumericalError("forward op produced non-finite values")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = ""
        out._consumed = False
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._prev = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._prev = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        """A graph-free view of this tensor's data."""
        return Tensor(self.data)

    def backward(self) -> None:
        """Fill ``.grad`` on every requires_grad tensor reachable from this scalar.

        The recorded graph is single-use: running backward twice without a
        fresh forward pass is an error.
        """
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if self._consumed:
            raise ContractError("backward already ran on this graph; run a new forward pass first")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                if node._consumed:
                    raise ContractError("graph node already consumed by an earlier backward pass")
                node._backward()
                node._consumed = True

    # Operator sugar; scalars are promoted to constant tensors.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{label})"


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _coerce(a, b)
    b = _coerce(b, a)

    def backward():
        _accum(a, _unbroadcast(out.grad, a.data.shape))
        _accum(b, _unbroadcast(out.grad, b.data.shape))

    out = Tensor._op(a.data + b.data, (a, b), backward)
    return out


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _coerce(a, b)
    b = _coerce(b, a)

    def backward():
        _accum(a, _unbroadcast(out.grad, a.data.shape))
        _accum(b, _unbroadcast(-out.grad, b.data.shape))

    out = Tensor._op(a.data - b.data, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _coerce(a, b)
    b = _coerce(b, a)

    def backward():
        _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
        _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))

    out = Tensor._op(a.data * b.data, (a, b), backward)
    return out


def neg(a: Tensor) -> Tensor:
    def backward():
        _accum(a, -out.grad)

    out = Tensor._op(-a.data, (a,), backward)
    return out


def exp(a: Tensor) -> Tensor:
    def backward():
        _accum(a, out.grad * out.data)

    out = Tensor._op(np.exp(a.data), (a,), backward)
    return out


def log(a: Tensor) -> Tensor:
    def backward():
        _accum(a, out.grad / a.data)

    out = Tensor._op(np.log(a.data), (a,), backward)
    return out


def sqrt(a: Tensor) -> Tensor:
    # Subgradient 0 at exactly zero keeps sign-symmetric distances usable
    # when a prediction lands on +/- ground truth.
    def backward():
        safe = np.where(out.data > 0, out.data, 1.0)
        _accum(a, out.grad * np.where(out.data > 0, 0.5 / safe, 0.0))

    out = Tensor._op(np.sqrt(a.data), (a,), backward)
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data <= b.data

    def backward():
        _accum(a, _unbroadcast(out.grad * take_a, a.data.shape))
        _accum(b, _unbroadcast(out.grad * ~take_a, b.data.shape))

    out = Tensor._op(np.where(take_a, a.data, b.data), (a, b), backward)
    return out


def clamp(a: Tensor, lo, hi) -> Tensor:
    """Elementwise clamp; gradient is 1 inside [lo, hi] (inclusive), 0 outside."""
    lo = np.asarray(lo, dtype=a.data.dtype)
    hi = np.asarray(hi, dtype=a.data.dtype)
    inside = (a.data >= lo) & (a.data <= hi)

    def backward():
        _accum(a, out.grad * inside)

    out = Tensor._op(np.clip(a.data, lo, hi), (a,), backward)
    return out


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    out = Tensor._op(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)
    return out


def mean_all(a: Tensor) -> Tensor:
    return mul(tsum(a), 1.0 / a.data.size)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward():
        _accum(a, out.grad.reshape(a.data.shape))

    out = Tensor._op(a.data.reshape(shape), (a,), backward)
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map [N,F] @ [F,M] + [M]."""
    if x.data.ndim != 2 or x.data.shape[1] != weight.data.shape[0]:
        raise ContractError(
            f"dense expects [N,{weight.data.shape[0]}] input, got {x.data.shape}"
        )

    def backward():
        g = out.grad
        _accum(x, g @ weight.data.T)
        _accum(weight, x.data.T @ g)
        _accum(bias, g.sum(axis=0))

    out = Tensor._op(x.data @ weight.data + bias.data, (x, weight, bias), backward)
    return out


def leaky_relu(a: Tensor, alpha: float) -> Tensor:
    if not 0.0 <= alpha < 1.0:
        raise ContractError(f"leaky_relu slope must be in [0, 1), got {alpha}")
    positive = a.data >= 0

    def backward():
        _accum(a, out.grad * np.where(positive, 1.0, alpha).astype(a.data.dtype))

    out = Tensor._op(np.where(positive, a.data, a.data * alpha), (a,), backward)
    return out


def sigmoid(a: Tensor) -> Tensor:
    """Logistic function with output clipped strictly inside (0, 1)."""
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-a.data))
    eps = np.finfo(a.data.dtype).eps
    y = np.clip(y, eps, 1.0 - eps)

    def backward():
        _accum(a, out.grad * y * (1.0 - y))

    out = Tensor._op(y, (a,), backward)
    return out


def paste(context: Tensor, patch: Tensor) -> Tensor:
    """Write a patch into the centered cube of a context block.

    context: [B, S, S, S, C], patch: [B, n, n, n, C] with n <= S and S - n even.
    """
    if context.data.ndim != 5 or patch.data.ndim != 5:
        raise ContractError("paste expects 5-d [batch, x, y, z, channel] tensors")
    s = context.data.shape[1]
    n = patch.data.shape[1]
    if patch.data.shape[0] != context.data.shape[0] or patch.data.shape[4] != context.data.shape[4]:
        raise ContractError(f"paste batch/channel mismatch: {context.data.shape} vs {patch.data.shape}")
    if n > s or (s - n) % 2 != 0:
        raise ContractError(f"patch side {n} cannot be centered in context side {s}")
    lo = (s - n) // 2
    center = (slice(None), slice(lo, lo + n), slice(lo, lo + n), slice(lo, lo + n), slice(None))
    data = context.data.copy()
    data[center] = patch.data

    def backward():
        g = out.grad
        if context.requires_grad:
            gc = g.copy()
            gc[center] = 0
            _accum(context, gc)
        if patch.requires_grad:
            _accum(patch, g[center])

    out = Tensor._op(data, (context, patch), backward)
    return out
