"""Reverse-mode automatic differentiation over numpy arrays.

A small dynamic tape: every operation returns a :class:`Var` holding the
forward value, references to its parents, and a closure computing the
vector-Jacobian product. :func:`backward` walks the graph once in reverse
topological order and accumulates gradients. Heavier primitives elsewhere in
the package (batched axis-angle rotation, the soft rasterizer) plug in by
constructing a ``Var`` with a hand-written VJP.

Everything is float64. Any operation producing a non-finite value raises
:class:`NumericsError` immediately, naming the offending primitive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericsError


def _check_finite(value, op):
    if not np.all(np.isfinite(value)):
        raise NumericsError(f"non-finite value in '{op}'", primitive=op)


class Var:
    """Node in the computation graph: a float64 array plus backward closure."""

    __slots__ = ("value", "grad", "op", "_parents", "_vjp")

    # Make numpy defer to the reflected operators below instead of trying to
    # broadcast a Var elementwise.
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None, op="leaf"):
        value = np.asarray(value, dtype=np.float64)
        _check_finite(value, op)
        self.value = value
        self.grad = None
        self.op = op
        self._parents = tuple(parents)
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


def asvar(x):
    """Promote ``x`` to a constant leaf unless it already is a Var."""
    return x if isinstance(x, Var) else Var(x, op="const")


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = asvar(a), asvar(b)
    out = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Var(out, (a, b), vjp, op="add")


def subtract(a, b):
    a, b = asvar(a), asvar(b)
    out = a.value - b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return Var(out, (a, b), vjp, op="subtract")


def multiply(a, b):
    a, b = asvar(a), asvar(b)
    out = a.value * b.value

    def vjp(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return Var(out, (a, b), vjp, op="multiply")


def divide(a, b):
    a, b = asvar(a), asvar(b)
    out = a.value / b.value

    def vjp(g):
        return (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        )

    return Var(out, (a, b), vjp, op="divide")


def negative(a):
    a = asvar(a)
    return Var(-a.value, (a,), lambda g: (-g,), op="negative")


def power(a, exponent):
    """Elementwise power with a constant scalar exponent."""
    a = asvar(a)
    p = float(exponent)
    out = a.value**p

    def vjp(g):
        return (g * p * a.value ** (p - 1.0),)

    return Var(out, (a,), vjp, op="power")


def exp(a):
    a = asvar(a)
    out = np.exp(a.value)
    return Var(out, (a,), lambda g: (g * out,), op="exp")


def sqrt(a):
    a = asvar(a)
    out = np.sqrt(a.value)
    return Var(out, (a,), lambda g: (g * 0.5 / out,), op="sqrt")


def sin(a):
    a = asvar(a)
    return Var(np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),), op="sin")


def cos(a):
    a = asvar(a)
    return Var(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),), op="cos")


def tanh(a):
    a = asvar(a)
    out = np.tanh(a.value)
    return Var(out, (a,), lambda g: (g * (1.0 - out * out),), op="tanh")


def sigmoid(a):
    a = asvar(a)
    x = a.value
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Var(out, (a,), vjp, op="sigmoid")


def softplus(a):
    """log(1 + exp(x)), computed stably."""
    a = asvar(a)
    out = np.logaddexp(0.0, a.value)

    def vjp(g):
        x = a.value
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return (g * s,)

    return Var(out, (a,), vjp, op="softplus")


def reduce_sum(a, axis=None, keepdims=False):
    a = asvar(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(a_ % a.value.ndim for a_ in axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return Var(out, (a,), vjp, op="sum")


def reduce_mean(a, axis=None, keepdims=False):
    a = asvar(a)
    n = a.value.size if axis is None else np.prod(
        [a.value.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return multiply(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def matmul(a, b):
    """Matrix product; supports 2-D and identically batched (..., m, n) operands."""
    a, b = asvar(a), asvar(b)
    out = a.value @ b.value

    def vjp(g):
        bt = np.swapaxes(b.value, -1, -2)
        at = np.swapaxes(a.value, -1, -2)
        ga = g @ bt
        gb = at @ g
        return _unbroadcast(ga, a.value.shape), _unbroadcast(gb, b.value.shape)

    return Var(out, (a, b), vjp, op="matmul")


def einsum(subscripts, a, b):
    """Two-operand einsum.

    Every index of each operand must appear in the other operand or in the
    output, which makes the VJP another einsum with the roles swapped. All
    uses in this package satisfy that.
    """
    a, b = asvar(a), asvar(b)
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    sub_a, sub_b = lhs.split(",")
    if not set(sub_a) <= set(sub_b) | set(out_sub) or not set(sub_b) <= set(sub_a) | set(out_sub):
        raise DimensionError(f"unsupported einsum spec for autodiff: {subscripts!r}")
    out = np.einsum(subscripts, a.value, b.value)

    def vjp(g):
        ga = np.einsum(f"{out_sub},{sub_b}->{sub_a}", g, b.value)
        gb = np.einsum(f"{sub_a},{out_sub}->{sub_b}", a.value, g)
        return ga, gb

    return Var(out, (a, b), vjp, op="einsum")


def reshape(a, shape):
    a = asvar(a)
    out = a.value.reshape(shape)

    def vjp(g):
        return (g.reshape(a.value.shape),)

    return Var(out, (a,), vjp, op="reshape")


def _is_advanced(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def take(a, idx):
    """Indexing/slicing; integer-array (gather) indices scatter-add on backward."""
    a = asvar(a)
    out = a.value[idx]
    advanced = _is_advanced(idx)

    def vjp(g):
        z = np.zeros_like(a.value)
        if advanced:
            np.add.at(z, idx, g)
        else:
            z[idx] += g
        return (z,)

    return Var(out, (a,), vjp, op="take")


def concatenate(vars_, axis=0):
    vars_ = [asvar(v) for v in vars_]
    out = np.concatenate([v.value for v in vars_], axis=axis)
    sizes = [v.value.shape[axis] for v in vars_]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Var(out, tuple(vars_), vjp, op="concatenate")


def stack(vars_, axis=0):
    vars_ = [asvar(v) for v in vars_]
    out = np.stack([v.value for v in vars_], axis=axis)

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0)[i] for i in range(len(vars_)))

    return Var(out, tuple(vars_), vjp, op="stack")


def backward(root):
    """Accumulate gradients of the scalar ``root`` into ``.grad`` of each node."""
    if root.size != 1:
        raise DimensionError("backward requires a scalar root")
    topo = []
    seen = set()
    work = [(root, False)]
    while work:
        node, expanded = work.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        work.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                work.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None:
                continue
            _check_finite(g, f"grad:{node.op}")
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g
    return root


@dataclass(frozen=True)
class ParamLayout:
    """Named, shaped segments of a flat parameter vector, in order."""

    entries: tuple  # of (name, shape) pairs

    def __post_init__(self):
        offsets = {}
        pos = 0
        for name, shape in self.entries:
            size = int(np.prod(shape, dtype=int)) if shape else 1
            offsets[name] = (pos, pos + size, tuple(shape))
            pos += size
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "total", pos)

    def segment_slice(self, name):
        lo, hi, _ = self._offsets[name]
        return slice(lo, hi)

    def segment_shape(self, name):
        return self._offsets[name][2]

    def names(self):
        return [name for name, _ in self.entries]


class ParamVector:
    """Flat float64 optimization vector with a named-segment layout."""

    def __init__(self, values, layout):
        values = np.asarray(values, dtype=np.float64).ravel().copy()
        if values.size != layout.total:
            raise DimensionError(
                f"parameter vector has {values.size} entries, layout expects {layout.total}"
            )
        self.values = values
        self.layout = layout

    @classmethod
    def concat(cls, pairs):
        """Build from (name, array) pairs; segment shapes come from the arrays."""
        entries = tuple((name, np.asarray(a).shape) for name, a in pairs)
        values = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for _, a in pairs])
        return cls(values, ParamLayout(entries))

    def segment(self, name):
        """Shaped view of one segment (do not mutate)."""
        return self.values[self.layout.segment_slice(name)].reshape(
            self.layout.segment_shape(name)
        )

    def split(self):
        return {name: self.segment(name) for name in self.layout.names()}

    def replace(self, values):
        return ParamVector(values, self.layout)

    def copy(self):
        return ParamVector(self.values.copy(), self.layout)


def _leaves(params):
    return {
        name: Var(params.segment(name).copy(), op=f"param:{name}")
        for name in params.layout.names()
    }


def evaluate(objective, params):
    """Objective value only (no backward pass)."""
    out = objective(_leaves(params))
    if out.size != 1:
        raise DimensionError("objective must return a scalar")
    return float(out.value)


def value_and_grad(objective, params):
    """Evaluate ``objective`` on named segment Vars; return (value, flat grad).

    ``objective`` maps a dict of segment-name -> Var to a scalar Var. The
    returned gradient is laid out like ``params.values``; segments the
    objective never touches get zero gradient.
    """
    leaves = _leaves(params)
    out = objective(leaves)
    if out.size != 1:
        raise DimensionError("objective must return a scalar")
    backward(out)
    grad = np.zeros(params.layout.total)
    for name, leaf in leaves.items():
        if leaf.grad is not None:
            grad[params.layout.segment_slice(name)] = leaf.grad.ravel()
    return float(out.value), grad


@dataclass
class FdReport:
    """Result of comparing tape gradients against central differences."""

    max_rel_err: float
    mean_rel_err: float
    worst_coord: int
    n_checked: int
    h: float
    tol: float | None

    @property
    def passed(self):
        return self.tol is None or self.max_rel_err <= self.tol


def fd_check(objective, params, h=1e-5, tol=None, coords=None, floor=1e-6):
    """Central-difference check of ``value_and_grad`` on selected coordinates.

    ``coords`` defaults to every coordinate; pass an index array to spot-check
    large parameter vectors. Relative error uses max(|ad|, |fd|, floor) as the
    denominator so near-zero gradients compare absolutely at scale ``floor``.
    """
    _, grad = value_and_grad(objective, params)
    if coords is None:
        coords = np.arange(params.values.size)
    else:
        coords = np.asarray(coords, dtype=int)
    fd = np.empty(coords.size)
    base = params.values
    for k, i in enumerate(coords):
        vp = base.copy()
        vp[i] += h
        vm = base.copy()
        vm[i] -= h
        fd[k] = (evaluate(objective, params.replace(vp)) - evaluate(objective, params.replace(vm))) / (2.0 * h)
    ad = grad[coords]
    denom = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), floor)
    rel = np.abs(ad - fd) / denom
    worst = int(np.argmax(rel)) if rel.size else 0
    return FdReport(
        max_rel_err=float(rel.max()) if rel.size else 0.0,
        mean_rel_err=float(rel.mean()) if rel.size else 0.0,
        worst_coord=int(coords[worst]) if rel.size else -1,
        n_checked=int(coords.size),
        h=h,
        tol=tol,
    )
