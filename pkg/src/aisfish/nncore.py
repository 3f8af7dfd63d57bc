"""A small reverse-mode autodiff over numpy arrays.

Only what the recurrent classifiers need: 2-D matmul, elementwise math with
bias-style broadcasting, the usual activations, reductions, dropout and two
fused loss terms. Ops record onto the innermost active :class:`Tape`; with
no tape active they just compute.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import NumericFault, StateError

_state = threading.local()
_default_dtype = np.float32


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the storage dtype of newly created tensors."""
    global _default_dtype
    old, _default_dtype = _default_dtype, np.dtype(dtype).type
    try:
        yield
    finally:
        _default_dtype = old


def _tapes() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def active_tape() -> "Tape | None":
    tapes = _tapes()
    return tapes[-1] if tapes else None


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_default_dtype)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"{type(self).__name__}(shape={self.shape}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    __slots__ = ("grad",)

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


class Tape:
    """Records (output, inputs, backward) triples in execution order."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self) -> "Tape":
        _tapes().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tapes().remove(self)

    def record(self, out: Tensor, inputs: tuple, backward: Callable) -> None:
        self.nodes.append((out, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(param) into every reachable Parameter's ``grad``."""
        if not self.nodes or loss.data.size != 1:
            raise StateError("backward needs a scalar loss produced on this tape")
        if not any(out is loss for out, _, _ in self.nodes):
            raise StateError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, fn in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                if isinstance(inp, Parameter):
                    inp.grad += gi.astype(inp.grad.dtype, copy=False)
                elif id(inp) in grads:
                    grads[id(inp)] = grads[id(inp)] + gi
                else:
                    grads[id(inp)] = gi

    def clear(self) -> None:
        self.nodes.clear()


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(value: np.ndarray, inputs: tuple, backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericFault(f"non-finite output from {op}")
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(out, inputs, backward)
    return out


def _recording(*inputs) -> bool:
    return active_tape() is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape or b.ndim == 0 or a.ndim == 0:
        return
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(dtype=np.float64), dtype=g.dtype)
    return g.sum(axis=0, dtype=np.float64).astype(g.dtype)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _finish(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _finish(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data
    return _finish(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(m, k) @ (k, n) -> (m, n), or (m, k) @ (k,) -> (m,).

    Without a tape the product goes through einsum, whose per-row result does
    not depend on how many rows are in the batch; BLAS gemm gives no such
    guarantee. Streaming and batch inference rely on that.
    """
    a, b = _wrap(a), _wrap(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim not in (1, 2) or ad.shape[1] != bd.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
    if _recording(a, b):
        value = ad @ bd
    else:
        value = np.einsum("mk,kn->mn" if bd.ndim == 2 else "mk,k->m", ad, bd)

    def backward(g):
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _finish(value, (a, b), backward, "matmul")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _finish(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _finish(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1 / (1 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1 + ez)
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _finish(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape, dt = x.shape, x.data.dtype
    value = np.asarray(x.data.sum(dtype=np.float64), dtype=dt)
    return _finish(value, (x,), lambda g: (np.broadcast_to(g, shape).astype(dt),), "sum")


def mean(x: Tensor) -> Tensor:
    shape, dt, n = x.shape, x.data.dtype, x.data.size
    value = np.asarray(x.data.mean(dtype=np.float64), dtype=dt)
    return _finish(value, (x,), lambda g: (np.broadcast_to(g / n, shape).astype(dt),), "mean")


def cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Column slice x[:, start:stop]; used to split stacked gate pre-activations."""
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _finish(x.data[:, start:stop], (x,), backward, "cols")


def row(x: Tensor, i: int) -> Tensor:
    """Row i of a 2-D tensor as a vector."""
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[i] = g
        return (full,)

    return _finish(x.data[i], (x,), backward, "row")


def dropout(x: Tensor, rate: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout; identity when not training or when rate is 0.

    `rng` may be a numpy Generator or an integer seed.
    """
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= rate).astype(x.data.dtype) / x.data.dtype.type(1.0 - rate)
    return _finish(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def bce_with_logits(logits: Tensor, y) -> Tensor:
    """Mean binary cross-entropy computed from logits."""
    z = logits.data.astype(np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"bce: incompatible shapes {z.shape} and {y.shape}")
    n = z.size
    value = (np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()
    dt = logits.data.dtype
    p = _sigmoid(z)
    return _finish(np.asarray(value, dtype=dt), (logits,),
                   lambda g: ((g * (p - y) / n).astype(dt),), "bce")


def center_loss(emb: Tensor, centers: Tensor, y) -> Tensor:
    """Mean over the batch of 0.5 * ||emb_i - centers[y_i]||^2."""
    y = np.asarray(y, dtype=np.int64)
    e, c = emb.data, centers.data
    if e.ndim != 2 or c.ndim != 2 or e.shape[1] != c.shape[1] or len(y) != len(e):
        raise ValueError(f"center_loss: incompatible shapes {e.shape}, {c.shape}, {y.shape}")
    n = len(e)
    diff = e.astype(np.float64) - c[y].astype(np.float64)
    value = 0.5 * (diff * diff).sum() / n

    def backward(g):
        ge = g * diff / n
        gc = np.zeros(c.shape, dtype=np.float64)
        np.add.at(gc, y, -ge)
        return ge.astype(e.dtype), gc.astype(c.dtype)

    return _finish(np.asarray(value, dtype=e.dtype), (emb, centers), backward, "center_loss")


def zero_grads(params: Sequence[Parameter]) -> None:
    for p in params:
        p.zero_grad()
