"""Reverse-mode automatic differentiation on a flat tape of numpy arrays.

Every differentiable op appends one :class:`Node` to the active :class:`Tape`
in forward order; :func:`backward` walks the nodes in reverse append order
exactly once and then clears the tape. Leaves (parameters) accumulate their
gradient in ``Tensor.grad``.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


@dataclass
class Node:
    out: "Tensor"
    inputs: tuple["Tensor", ...]
    rule: Callable[[np.ndarray], tuple]


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.enabled = True

    def record(self, out, inputs, rule):
        out.tape_id = len(self.nodes)
        self.nodes.append(Node(out, inputs, rule))

    def reset(self):
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


_TAPE = Tape()


def current_tape() -> Tape:
    return _TAPE


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording anything on the tape."""
    prev = _TAPE.enabled
    _TAPE.enabled = False
    try:
        yield
    finally:
        _TAPE.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "tape_id", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tape_id = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, inputs, rule):
    out = Tensor(data)
    if _TAPE.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPE.record(out, inputs, rule)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data
    out = ad / bd
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / bd, sa), _unbroadcast(-g * out / bd, sb)))


def neg(a):
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float):
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def square(a):
    a = as_tensor(a)
    ad = a.data
    return _result(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (0.5 * g / out,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a):
    a = as_tensor(a)
    ad = a.data
    s = _sigmoid(ad)
    return _result(ad * s, (a,), lambda g: (g * (s * (1.0 + ad * (1.0 - s))),))


def log_sigmoid(a):
    """Stable ``log(sigmoid(a))``."""
    a = as_tensor(a)
    ad = a.data
    out = -np.logaddexp(0.0, -ad)
    return _result(out, (a,), lambda g: (g * _sigmoid(-ad),))


def clamp_min(a, lo: float):
    a = as_tensor(a)
    ad = a.data
    keep = ad >= lo
    return _result(np.maximum(ad, lo), (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    sa = a.shape

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, sa).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), rule)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def dot(a, b):
    """Inner product over the last axis; ``dot([1,2],[3,4]) == 11``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1:] != b.shape[-1:]:
        raise ShapeError(f"dot: shapes {a.shape} and {b.shape} do not conform")
    return sum(mul(a, b), axis=-1)


def sq_norm(a):
    """Squared euclidean norm over the last axis."""
    return sum(square(a), axis=-1)


# ---------------------------------------------------------------- linear algebra / layout

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def concat(tensors: Sequence, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    ax = axis if axis >= 0 else ts[0].ndim + axis
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
                t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax):
            raise ShapeError(f"concat: shapes {ts[0].shape} and {t.shape} do not conform")
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), rule)


def reshape(a, shape):
    a = as_tensor(a)
    sa = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(sa),))


def stop_grad(x) -> Tensor:
    """Same value, but nothing flows back into ``x``'s ancestors."""
    x = as_tensor(x)
    return Tensor(x.data)


# ---------------------------------------------------------------- backward

def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on the tape.

    The tape is consumed: nodes are visited once in reverse order and cleared.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = _TAPE
    if not loss.requires_grad or loss.tape_id is None:
        tape.reset()
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes[: loss.tape_id + 1]):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.rule(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.tape_id is None:
                # leaf: never alias the incoming buffer
                inp.grad = np.array(gi, dtype=DTYPE) if inp.grad is None else inp.grad + gi
            else:
                k = id(inp)
                prev = grads.get(k)
                grads[k] = gi if prev is None else prev + gi
    tape.reset()


def grad(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` w.r.t. ``wrt`` (zeros where unreachable)."""
    saved = [w.grad for w in wrt]
    for w in wrt:
        w.grad = None
    backward(loss)
    out = [np.zeros_like(w.data) if w.grad is None else w.grad for w in wrt]
    for w, s in zip(wrt, saved):
        w.grad = s
    return out
