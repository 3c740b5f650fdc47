"""A small dense 2-D array engine with a recording tape and reverse-mode gradients.

Every operation produces a :class:`Value` appended to the tape of its inputs.
``Tape.backward`` walks the records in reverse order and accumulates
vector-Jacobian products into the leaves.

>>> tape = Tape()
>>> x = tape.var([[2.0]])
>>> grads = tape.backward(sum_all(x * x))
>>> grads[x.id]
array([[4.]])
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class StaleValueError(RuntimeError):
    pass


class Value:
    """A 2-D float64 array recorded on a tape."""

    __slots__ = ("data", "tape", "id", "requires_grad", "_gen")

    def __init__(self, data, tape, node_id, requires_grad):
        self.data = data
        self.tape = tape
        self.id = node_id
        self.requires_grad = requires_grad
        self._gen = tape.generation

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 value, got {self.data.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        return f"Value(id={self.id}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Append-only record of primitive operations.

    Records are ``(output id, input values, vjp)`` where ``vjp`` maps the
    output cotangent to a tuple of input cotangents (``None`` to skip).
    """

    def __init__(self):
        self.records = []
        self.leaves = []
        self._next = 0
        self.generation = 0

    def __len__(self):
        return self._next

    def _new(self, data, requires_grad):
        v = Value(data, self, self._next, requires_grad)
        self._next += 1
        return v

    def var(self, data, requires_grad=True) -> Value:
        arr = _as_matrix(data)
        v = self._new(arr, requires_grad)
        if requires_grad:
            self.leaves.append(v)
        return v

    def const(self, data) -> Value:
        return self.var(data, requires_grad=False)

    def record(self, op, inputs, out, vjp) -> Value:
        for x in inputs:
            if x.tape is not self:
                raise ValueError(f"{op}: inputs live on different tapes")
            if x._gen != self.generation:
                raise StaleValueError(f"{op}: input {x.id} belongs to a cleared tape")
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"{op}: non-finite output")
        rg = any(x.requires_grad for x in inputs)
        v = self._new(out, rg)
        if rg:
            self.records.append((v.id, op, inputs, vjp))
        return v

    def backward(self, root: Value, clear=True) -> dict:
        """Gradients of scalar ``root`` for every requires-grad leaf, keyed by node id."""
        if root.shape != (1, 1):
            raise ValueError(f"backward needs a 1x1 root, got {root.shape}")
        if root.tape is not self:
            raise ValueError("root belongs to another tape")
        grads = {root.id: np.ones((1, 1))}
        for out_id, _op, inputs, vjp in reversed(self.records):
            g = grads.pop(out_id, None)
            if g is None:
                continue
            for x, gx in zip(inputs, vjp(g)):
                if gx is None or not x.requires_grad:
                    continue
                if x.id in grads:
                    grads[x.id] = grads[x.id] + gx
                else:
                    grads[x.id] = gx
        result = {}
        for leaf in self.leaves:
            g = grads.get(leaf.id)
            result[leaf.id] = np.zeros_like(leaf.data) if g is None else g
        if clear:
            self.clear()
        return result

    def clear(self):
        self.records = []
        self.leaves = []
        self.generation += 1


def _as_matrix(data):
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"only 2-D values are supported, got ndim={arr.ndim}")
    return arr


def _lift(x, tape):
    if isinstance(x, Value):
        return x
    return tape.const(x)


def _pair(a, b, op):
    tape = a.tape if isinstance(a, Value) else getattr(b, "tape", None)
    if tape is None:
        raise TypeError(f"{op}: at least one operand must be a Value")
    return _lift(a, tape), _lift(b, tape)


def _broadcast_shape(op, sa, sb):
    if sa == sb:
        return sa
    rows = sa[0] if sb[0] in (1, sa[0]) else sb[0] if sa[0] == 1 else None
    cols = sa[1] if sb[1] in (1, sa[1]) else sb[1] if sa[1] == 1 else None
    if rows is None or cols is None:
        raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")
    return rows, cols


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Value:
    a, b = _pair(a, b, "add")
    _broadcast_shape("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return a.tape.record("add", (a, b), a.data + b.data,
                         lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Value:
    a, b = _pair(a, b, "sub")
    _broadcast_shape("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return a.tape.record("sub", (a, b), a.data - b.data,
                         lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Value:
    """Elementwise product with row/column-vector broadcasting."""
    a, b = _pair(a, b, "mul")
    _broadcast_shape("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return a.tape.record("mul", (a, b), ad * bd,
                         lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Value, c: float) -> Value:
    c = float(c)
    return a.tape.record("scale", (a,), a.data * c, lambda g: (g * c,))


def relu(a: Value) -> Value:
    mask = a.data > 0
    return a.tape.record("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def exp(a: Value) -> Value:
    with np.errstate(over="ignore"):  # overflow is reported by record()
        out = np.exp(a.data)
    return a.tape.record("exp", (a,), out, lambda g: (g * out,))


def log(a: Value) -> Value:
    if np.any(a.data <= 0):
        raise DomainError(f"log: non-positive entry (min {a.data.min():.3g})")
    x = a.data
    return a.tape.record("log", (a,), np.log(x), lambda g: (g / x,))


def sigmoid(a: Value) -> Value:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return a.tape.record("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


# --- linear algebra --------------------------------------------------------

def matmul(a, b) -> Value:
    a, b = _pair(a, b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    ra, rb = a.requires_grad, b.requires_grad
    return a.tape.record("matmul", (a, b), ad @ bd,
                         lambda g: (g @ bd.T if ra else None, ad.T @ g if rb else None))


def spmm(m, x: Value) -> Value:
    """``m @ x`` for a constant (scipy sparse or dense) left operand."""
    if m.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: incompatible shapes {m.shape} and {x.shape}")
    mt = m.T.tocsr() if sp.issparse(m) else np.asarray(m).T
    out = np.asarray(m @ x.data)
    return x.tape.record("spmm", (x,), out, lambda g: (np.asarray(mt @ g),))


def transpose(a: Value) -> Value:
    return a.tape.record("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


# --- reductions ------------------------------------------------------------

def sum_all(a: Value) -> Value:
    shape = a.shape
    return a.tape.record("sum", (a,), a.data.sum().reshape(1, 1), lambda g: (np.full(shape, g[0, 0]),))


def mean_all(a: Value) -> Value:
    shape = a.shape
    n = a.data.size
    return a.tape.record("mean", (a,), a.data.mean().reshape(1, 1),
                         lambda g: (np.full(shape, g[0, 0] / n),))


def row_sum(a: Value) -> Value:
    shape = a.shape
    return a.tape.record("row_sum", (a,), a.data.sum(axis=1, keepdims=True),
                         lambda g: (np.broadcast_to(g, shape).copy(),))


def row_mean(a: Value) -> Value:
    shape = a.shape
    c = shape[1]
    return a.tape.record("row_mean", (a,), a.data.mean(axis=1, keepdims=True),
                         lambda g: (np.broadcast_to(g / c, shape).copy(),))


def col_sum(a: Value) -> Value:
    shape = a.shape
    return a.tape.record("col_sum", (a,), a.data.sum(axis=0, keepdims=True),
                         lambda g: (np.broadcast_to(g, shape).copy(),))


def col_mean(a: Value) -> Value:
    shape = a.shape
    r = shape[0]
    return a.tape.record("col_mean", (a,), a.data.mean(axis=0, keepdims=True),
                         lambda g: (np.broadcast_to(g / r, shape).copy(),))


# --- row-wise maps ---------------------------------------------------------

def row_softmax(a: Value) -> Value:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return a.tape.record("row_softmax", (a,), p, vjp)


def row_l2_normalize(a: Value, eps=1e-12) -> Value:
    norm = np.sqrt((a.data ** 2).sum(axis=1, keepdims=True))
    norm = np.maximum(norm, eps)
    y = a.data / norm

    def vjp(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,)

    return a.tape.record("row_l2_normalize", (a,), y, vjp)


# --- indexing / layout -----------------------------------------------------

def gather_rows(a: Value, index) -> Value:
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return a.tape.record("gather_rows", (a,), a.data[idx], vjp)


def hstack(values) -> Value:
    values = list(values)
    tape = values[0].tape
    rows = {v.shape[0] for v in values}
    if len(rows) != 1:
        raise ShapeError(f"hstack: row counts differ {[v.shape for v in values]}")
    cuts = np.cumsum([v.shape[1] for v in values])[:-1]
    return tape.record("hstack", tuple(values), np.hstack([v.data for v in values]),
                       lambda g: tuple(np.split(g, cuts, axis=1)))


def vstack(values) -> Value:
    values = list(values)
    tape = values[0].tape
    cols = {v.shape[1] for v in values}
    if len(cols) != 1:
        raise ShapeError(f"vstack: column counts differ {[v.shape for v in values]}")
    cuts = np.cumsum([v.shape[0] for v in values])[:-1]
    return tape.record("vstack", tuple(values), np.vstack([v.data for v in values]),
                       lambda g: tuple(np.split(g, cuts, axis=0)))


_PRIMITIVES = {
    "matmul": matmul,
    "spmm": spmm,
    "add": add,
    "sub": sub,
    "scale": scale,
    "relu": relu,
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
    "row_softmax": row_softmax,
    "row_l2_normalize": row_l2_normalize,
    "sum": sum_all,
    "mean": mean_all,
    "row_sum": row_sum,
    "row_mean": row_mean,
    "col_sum": col_sum,
    "col_mean": col_mean,
    "gather_rows": gather_rows,
    "hstack": lambda *xs: hstack(xs),
    "vstack": lambda *xs: vstack(xs),
    "mul": mul,
    "transpose": transpose,
}


def primitive(kind: str, *inputs):
    """Dispatch a primitive by name, e.g. ``primitive("matmul", a, b)``."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    return fn(*inputs)


def backward(root: Value, clear=True) -> dict:
    return root.tape.backward(root, clear=clear)


def grad_check(f, leaves, h=1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` receives one Value per array in ``leaves`` and returns a 1x1 Value.
    The error per entry is ``|a - n| / max(1, |a|, |n|)``.
    """
    arrays = [_as_matrix(x) for x in leaves]
    tape = Tape()
    vs = [tape.var(a) for a in arrays]
    grads = tape.backward(f(*vs))
    analytic = [grads[v.id] for v in vs]

    def evaluate(arrs):
        t = Tape()
        return f(*[t.const(a) for a in arrs]).item()

    worst = 0.0
    for k, arr in enumerate(arrays):
        for idx in np.ndindex(arr.shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[k][idx] += h
            minus[k][idx] -= h
            num = (evaluate(plus) - evaluate(minus)) / (2 * h)
            ana = analytic[k][idx]
            err = abs(ana - num) / max(1.0, abs(ana), abs(num))
            worst = max(worst, err)
    return worst
