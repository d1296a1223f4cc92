"""Reverse-mode differentiation over numpy arrays.

``Var`` wraps an array and records how it was computed. The module-level
functions (``exp``, ``cos``, ``matmul`` ...) accept either plain arrays or
``Var`` objects: with plain arrays they are ordinary numpy calls, so model
code is written once and runs both with and without a tape.

Also hosts ``ParamVector`` (flat view of a named parameter set), ``grad``
and ``finite_diff_check``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Var:
    __array_ufunc__ = None  # make ndarray defer to the reflected operators below
    __slots__ = ("value", "grad", "parents")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=float)
        self.parents = parents  # tuple of (Var, vjp)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var({self.value!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, reciprocal(other))

    def __rtruediv__(self, other):
        return mul(other, reciprocal(self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        if isinstance(p, Var):
            raise TypeError("only constant exponents are supported")
        x = self.value
        return Var(x ** p, ((self, lambda g: g * p * x ** (p - 1)),))

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every ancestor."""
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node.parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.value) if seed is None else np.asarray(seed, dtype=float)
        for node in reversed(order):
            if node.grad is None:
                continue
            for parent, vjp in node.parents:
                g = vjp(node.grad)
                parent.grad = g if parent.grad is None else parent.grad + g


def value(x):
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _wrap_parents(*pairs):
    return tuple((x, f) for x, f in pairs if isinstance(x, Var))


def add(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return a + b
    av, bv = value(a), value(b)
    sa, sb = np.shape(av), np.shape(bv)
    return Var(av + bv, _wrap_parents((a, lambda g: _unbroadcast(g, sa)),
                                      (b, lambda g: _unbroadcast(g, sb))))


def mul(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return a * b
    av, bv = value(a), value(b)
    sa, sb = np.shape(av), np.shape(bv)
    return Var(av * bv, _wrap_parents((a, lambda g: _unbroadcast(g * bv, sa)),
                                      (b, lambda g: _unbroadcast(g * av, sb))))


def neg(x):
    if not isinstance(x, Var):
        return -x
    return Var(-x.value, ((x, lambda g: -g),))


def reciprocal(x):
    if not isinstance(x, Var):
        return 1.0 / x
    r = 1.0 / x.value
    return Var(r, ((x, lambda g: -g * r * r),))


def matmul(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return a @ b
    av, bv = np.asarray(value(a)), np.asarray(value(b))
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul on the tape needs operands with ndim >= 2")
    out = av @ bv
    return Var(out, _wrap_parents(
        (a, lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)),
        (b, lambda g: _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)),
    ))


def _unary(x, f, df):
    """df receives (input value, output value)."""
    if not isinstance(x, Var):
        return f(x)
    xv = x.value
    y = f(xv)
    return Var(y, ((x, lambda g: g * df(xv, y)),))


def exp(x):
    return _unary(x, np.exp, lambda x, y: y)


def log(x):
    return _unary(x, np.log, lambda x, y: 1.0 / x)


def cos(x):
    return _unary(x, np.cos, lambda x, y: -np.sin(x))


def sin(x):
    return _unary(x, np.sin, lambda x, y: np.cos(x))


def tanh(x):
    return _unary(x, np.tanh, lambda x, y: 1.0 - y * y)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(x):
    return _unary(x, _sigmoid, lambda x, y: y * (1.0 - y))


def softplus(x):
    return _unary(x, lambda v: np.logaddexp(0.0, v), lambda x, y: _sigmoid(x))


def floor_at(x, eps):
    """``max(x, eps)``; the gradient is zero where the floor is active."""
    return _unary(x, lambda v: np.maximum(v, eps), lambda x, y: (x > eps).astype(float))


def sum_(x, axis=None, keepdims=False):
    if not isinstance(x, Var):
        return np.sum(x, axis=axis, keepdims=keepdims)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return Var(np.sum(x.value, axis=axis, keepdims=keepdims), ((x, vjp),))


def mean(x, axis=None):
    n = np.size(value(x)) if axis is None else np.shape(value(x))[axis]
    return sum_(x, axis) * (1.0 / n)


def cumsum(x, axis):
    if not isinstance(x, Var):
        return np.cumsum(x, axis=axis)

    def vjp(g):
        return np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)

    return Var(np.cumsum(x.value, axis=axis), ((x, vjp),))


def reshape(x, shape):
    if not isinstance(x, Var):
        return np.reshape(x, shape)
    old = x.shape
    return Var(np.reshape(x.value, shape), ((x, lambda g: np.reshape(g, old)),))


def swapaxes(x, a, b):
    if not isinstance(x, Var):
        return np.swapaxes(x, a, b)
    return Var(np.swapaxes(x.value, a, b), ((x, lambda g: np.swapaxes(g, a, b)),))


def getitem(x, idx):
    if not isinstance(x, Var):
        return x[idx]
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return Var(x.value[idx], ((x, vjp),))


def concatenate(xs, axis=0):
    if not any(isinstance(x, Var) for x in xs):
        return np.concatenate(xs, axis=axis)
    vals = [np.asarray(value(x)) for x in xs]
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
    parents = []
    for k, x in enumerate(xs):
        if isinstance(x, Var):
            parents.append((x, lambda g, k=k: np.split(g, bounds, axis=axis)[k]))
    return Var(np.concatenate(vals, axis=axis), tuple(parents))


def stack(xs, axis=0):
    if not any(isinstance(x, Var) for x in xs):
        return np.stack(xs, axis=axis)
    vals = [np.asarray(value(x)) for x in xs]
    parents = []
    for k, x in enumerate(xs):
        if isinstance(x, Var):
            parents.append((x, lambda g, k=k: np.take(g, k, axis=axis)))
    return Var(np.stack(vals, axis=axis), tuple(parents))


def where(cond, a, b):
    """Select elementwise by a constant boolean mask."""
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.where(cond, a, b)
    av, bv = value(a), value(b)
    sa, sb = np.shape(av), np.shape(bv)
    return Var(np.where(cond, av, bv), _wrap_parents(
        (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), sa)),
        (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), sb)),
    ))


# ---------------------------------------------------------------------------
# flat parameter vectors


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass
class ParamVector:
    """All trainable scalars of one model, flattened in a fixed name order.

    ``index`` lists ``(name, shape, start, stop)``; ``to_arrays`` inverts
    ``from_arrays`` exactly.
    """

    flat: np.ndarray
    index: tuple

    @classmethod
    def from_arrays(cls, arrays: dict) -> "ParamVector":
        index, pos, chunks = [], 0, []
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=float)
            index.append((name, arr.shape, pos, pos + arr.size))
            chunks.append(arr.ravel())
            pos += arr.size
        flat = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(flat, tuple(index))

    def to_arrays(self) -> dict:
        return {name: self.flat[a:b].reshape(shape).copy() for name, shape, a, b in self.index}

    def with_flat(self, flat) -> "ParamVector":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != self.flat.shape:
            raise ValueError(f"expected {self.flat.shape}, got {flat.shape}")
        return ParamVector(flat, self.index)

    def name_of(self, k: int) -> str:
        for name, shape, a, b in self.index:
            if a <= k < b:
                idx = tuple(int(i) for i in np.unravel_index(k - a, shape)) if shape else ()
                return f"{name}{list(idx)}" if idx else name
        raise IndexError(k)

    def __len__(self):
        return self.flat.size


def value_and_grad(loss, at: ParamVector):
    """Evaluate ``loss(arrays)`` on the tape and return (value, ParamVector grad)."""
    leaves = {name: Var(arr) for name, arr in at.to_arrays().items()}
    out = loss(leaves)
    if not isinstance(out, Var):
        # loss independent of every parameter
        val = float(out)
        if not np.isfinite(val):
            raise NonFiniteLossError(f"loss is {val}", at.index)
        return val, at.with_flat(np.zeros_like(at.flat))
    val = float(out.value)
    if not np.isfinite(val):
        raise NonFiniteLossError(f"loss is {val}", at.index)
    out.backward()
    g = np.concatenate([
        (leaves[name].grad if leaves[name].grad is not None else np.zeros(shape)).ravel()
        for name, shape, _, _ in at.index
    ]) if at.index else np.zeros(0)
    return val, at.with_flat(g)


def grad(loss, at: ParamVector) -> ParamVector:
    return value_and_grad(loss, at)[1]


@dataclass
class FDReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_err: np.ndarray
    checked: np.ndarray
    tol: float

    @property
    def max_rel_err(self) -> float:
        return float(self.rel_err[self.checked].max()) if self.checked.any() else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def worst(self, at: ParamVector | None = None, k: int = 5):
        idx = np.argsort(np.where(self.checked, self.rel_err, -1.0))[::-1][:k]
        return [(at.name_of(i) if at else int(i), self.analytic[i], self.numeric[i], self.rel_err[i])
                for i in idx]


def finite_diff_check(loss, at: ParamVector, h: float = 1e-5, tol: float = 1e-4,
                      stencil: int = 2, min_grad: float = 1e-6) -> FDReport:
    """Compare tape gradients with central differences coordinate by coordinate.

    ``stencil`` is 2 (three-point) or 4 (five-point). Coordinates whose
    gradient magnitude is below ``min_grad`` are reported but not checked.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-7, 1e-3]")
    if stencil not in (2, 4):
        raise ValueError("stencil must be 2 or 4")
    analytic = grad(loss, at).flat

    def f(flat):
        return float(loss(at.with_flat(flat).to_arrays()))

    numeric = np.empty_like(at.flat)
    for k in range(at.flat.size):
        e = np.zeros_like(at.flat)
        e[k] = h
        if stencil == 2:
            numeric[k] = (f(at.flat + e) - f(at.flat - e)) / (2 * h)
        else:
            numeric[k] = (-f(at.flat + 2 * e) + 8 * f(at.flat + e)
                          - 8 * f(at.flat - e) + f(at.flat - 2 * e)) / (12 * h)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(scale > 0, np.abs(analytic - numeric) / np.where(scale > 0, scale, 1.0), 0.0)
    checked = np.abs(analytic) > min_grad
    return FDReport(analytic, numeric, rel, checked, tol)
