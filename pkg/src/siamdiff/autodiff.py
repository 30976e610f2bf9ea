"""Minimal tape-based reverse-mode differentiation over numpy arrays.

Only the handful of ops the encoder and heads need. Every op records a
closure on the tape shared by its inputs; ``Tape.backward`` replays them in
reverse creation order, which is a valid topological order.
"""
from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import ShapeError, UsageError


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []
        self.leaves: dict[str, Var] = {}
        self.relu_masks: list[np.ndarray] = []  # active sets, for kink detection in gradient checks

    def leaf(self, name, value):
        v = Var(np.asarray(value, dtype=np.float64), self, requires_grad=True)
        self.leaves[name] = v
        return v

    def const(self, value):
        return Var(np.asarray(value, dtype=np.float64), self, requires_grad=False)

    def backward(self, out: "Var"):
        if out.tape is not self:
            raise UsageError("output was not recorded on this tape")
        if out.value.size != 1:
            raise ShapeError("backward needs a scalar output")
        for v in self.nodes:
            v.grad = None
        out.grad = np.ones_like(out.value)
        for v in reversed(self.nodes):
            if v.grad is None or v._back is None:
                continue
            v._back(v.grad)
        return {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in self.leaves.items()}


class Var:
    __slots__ = ("value", "tape", "requires_grad", "grad", "_back")

    def __init__(self, value, tape, requires_grad=False, back=None):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.grad = None
        self._back = back
        if requires_grad:
            tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def _acc(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __matmul__(self, o): return matmul(self, o)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise UsageError("op needs at least one recorded input")


def _wrap(x, tape):
    return x if isinstance(x, Var) else tape.const(x)


def _out(value, tape, inputs, back):
    req = any(i.requires_grad for i in inputs)
    return Var(value, tape, requires_grad=req, back=back if req else None)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)

    def back(g):
        a._acc(_unbroadcast(g, a.shape))
        b._acc(_unbroadcast(g, b.shape))
    return _out(a.value + b.value, tape, (a, b), back)


def sub(a, b):
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)

    def back(g):
        a._acc(_unbroadcast(g, a.shape))
        b._acc(_unbroadcast(-g, b.shape))
    return _out(a.value - b.value, tape, (a, b), back)


def mul(a, b):
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)

    def back(g):
        if a.requires_grad:
            a._acc(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._acc(_unbroadcast(g * a.value, b.shape))
    return _out(a.value * b.value, tape, (a, b), back)


def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")

    def back(g):
        if a.requires_grad:
            a._acc(g @ b.value.T)
        if b.requires_grad:
            b._acc(a.value.T @ g)
    return _out(a.value @ b.value, tape, (a, b), back)


def relu(a):
    mask = a.value > 0
    a.tape.relu_masks.append(mask)

    def back(g):
        a._acc(g * mask)
    return _out(a.value * mask, a.tape, (a,), back)


def take(a, index):
    """Row gather ``a[index]``."""
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]

    def back(g):
        a._acc(_kernels.segment_sum(g, index, n))
    return _out(a.value[index], a.tape, (a,), back)


def segment_sum(a, index, n):
    """Scatter-add rows of ``a`` into ``n`` buckets given by ``index``."""
    index = np.asarray(index, dtype=np.int64)

    def back(g):
        a._acc(g[index])
    return _out(_kernels.segment_sum(a.value, index, n), a.tape, (a,), back)


def concat(parts, axis=1):
    tape = _tape_of(*parts)
    parts = [_wrap(p, tape) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def back(g):
        for p, gp in zip(parts, np.split(g, sizes, axis=axis)):
            p._acc(gp)
    return _out(np.concatenate([p.value for p in parts], axis=axis), tape, parts, back)


def reshape(a, shape):
    old = a.shape

    def back(g):
        a._acc(g.reshape(old))
    return _out(a.value.reshape(shape), a.tape, (a,), back)


def sum_all(a):
    def back(g):
        a._acc(np.broadcast_to(g, a.shape))
    return _out(np.asarray(a.value.sum()), a.tape, (a,), back)


def log_softmax(a):
    """Row-wise log-softmax of a 2-D array."""
    z = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def back(g):
        a._acc(g - soft * g.sum(axis=1, keepdims=True))
    return _out(out, a.tape, (a,), back)


def pick(a, rows, cols):
    """Elementwise gather ``a[rows, cols]`` into a 1-D vector."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)

    def back(g):
        full = np.zeros_like(a.value)
        np.add.at(full, (rows, cols), g)
        a._acc(full)
    return _out(a.value[rows, cols], a.tape, (a,), back)


def square_sum(a):
    """sum(a**2) as a scalar."""
    def back(g):
        a._acc(2.0 * g * a.value)
    return _out(np.asarray(np.sum(a.value * a.value)), a.tape, (a,), back)
