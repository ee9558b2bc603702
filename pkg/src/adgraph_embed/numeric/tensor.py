"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when at
least one input has ``requires_grad``. Outside a tape they only compute
values, which is what finite-difference checks rely on.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

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
        return scale(self, -1.0)

    def __truediv__(self, c: float):
        return scale(self, 1.0 / float(c))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


@dataclass
class _Record:
    op: str
    out: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Tape:
    """Ordered record of primitive applications; use as a context manager."""

    def __init__(self) -> None:
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] = ()) -> None:
        backward(loss, self, wrt)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    stack = _tape_stack()
    if stack and any(t.requires_grad for t in inputs):
        t = Tensor._wrap(out, requires_grad=True)
        stack[-1].records.append(_Record(op, t, tuple(inputs), vjp))
        return t
    return Tensor._wrap(out)


def backward(loss: Tensor, tape: Tape, wrt: Iterable[Tensor] = ()) -> None:
    """Populate ``.grad`` on every grad-requiring tensor seen by ``tape``.

    Gradients from fan-out accumulate within one call; each call starts from
    zero. Tensors listed in ``wrt`` receive zeros when disconnected.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    seen: dict[int, Tensor] = {id(loss): loss}
    for rec in reversed(tape.records):
        g = grads.get(id(rec.out))
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            seen[id(inp)] = inp
            if id(inp) in grads:
                grads[id(inp)] = grads[id(inp)] + gi
            else:
                grads[id(inp)] = gi
    for rec in tape.records:
        seen.setdefault(id(rec.out), rec.out)
        for inp in rec.inputs:
            if inp.requires_grad:
                seen.setdefault(id(inp), inp)
    for t in wrt:
        seen.setdefault(id(t), t)
    for key, t in seen.items():
        g = grads.get(key)
        t.grad = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)


# --------------------------------------------------------------------------
# primitives

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _record("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    """Elementwise product (with broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _record("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


elementwise_mul = mul


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def vjp(g):
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", a.data @ b.data, (a, b), vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ValueError("transpose expects a matrix")
    return _record("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _record("reshape", out.copy(), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, key) -> Tensor:
    """NumPy indexing; the adjoint scatters with ``np.add.at`` so repeated indices accumulate."""
    a = as_tensor(a)
    out = np.array(a.data[key])
    rows = _row_index(key, a.ndim)

    def vjp(g):
        if rows is not None:
            idx, col = rows
            if col is None:
                M = sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(a.shape[0], idx.size))
                return (np.asarray(M @ g.reshape(idx.size, -1)).reshape(a.shape),)
            full = np.zeros_like(a.data)
            full[:, col] = np.bincount(idx, weights=g, minlength=a.shape[0])
            return (full,)
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _record("getitem", out, (a,), vjp)


def _row_index(key, ndim: int):
    """Recognize ``x[idx]`` and ``x[idx, c]`` gathers, which have fast adjoints."""
    if isinstance(key, np.ndarray) and key.ndim == 1 and key.dtype.kind in "iu":
        return key, None
    if (isinstance(key, tuple) and len(key) == 2 and ndim == 2 and isinstance(key[0], np.ndarray)
            and key[0].ndim == 1 and key[0].dtype.kind in "iu" and isinstance(key[1], (int, np.integer))):
        return key[0], int(key[1])
    return None


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat of nothing")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as err:
        raise ValueError(f"concat: {err}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _record("concat", out, tuple(ts), lambda g: tuple(np.split(g, bounds, axis=axis)))


def concat_rows(tensors: Sequence) -> Tensor:
    return concat(tensors, axis=0)


def relu(x) -> Tensor:
    """max(0, x); the derivative at 0 is taken as 0."""
    x = as_tensor(x)
    mask = x.data > 0
    return _record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    d = np.where(x.data > 0, 1.0, slope)
    return _record("leaky_relu", x.data * d, (x,), lambda g: (g * d,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _record("exp", out, (x,), lambda g: (g * out,))


def expm1(x) -> Tensor:
    """``exp(x) - 1``, accurate near zero."""
    x = as_tensor(x)
    out = np.expm1(x.data)
    return _record("expm1", out, (x,), lambda g: (g * (out + 1.0),))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _record("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def clamp(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _record("clamp", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def reduce_sum(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis), dtype=np.float64)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record("reduce_sum", out, (x,), vjp)


def mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis), 1.0 / count)


def masked_softmax(logits, index) -> Tensor:
    """Softmax of ``logits[index]``; positions outside ``index`` are 0."""
    logits = as_tensor(logits)
    if logits.ndim != 1:
        raise ValueError("masked_softmax expects a vector")
    idx = np.unique(np.asarray(index, dtype=np.int64))
    if idx.size == 0:
        raise ValueError("masked_softmax over an empty index set")
    z = logits.data[idx]
    e = np.exp(z - z.max())
    y = e / e.sum()
    out = np.zeros_like(logits.data)
    out[idx] = y

    def vjp(g):
        gi = g[idx]
        full = np.zeros_like(g)
        full[idx] = y * (gi - gi @ y)
        return (full,)

    return _record("masked_softmax", out, (logits,), vjp)


def segment_softmax(logits, segments: np.ndarray, num_segments: int) -> Tensor:
    """Independent softmax within each group of entries sharing a segment id."""
    logits = as_tensor(logits)
    seg = np.asarray(segments, dtype=np.int64)
    if logits.shape != seg.shape:
        raise ValueError(f"segment_softmax: logits {logits.shape} vs segments {seg.shape}")
    peak = np.full(num_segments, -np.inf)
    np.maximum.at(peak, seg, logits.data)
    e = np.exp(logits.data - peak[seg])
    y = e / np.bincount(seg, weights=e, minlength=num_segments)[seg]

    def vjp(g):
        dot = np.bincount(seg, weights=g * y, minlength=num_segments)
        return (y * (g - dot[seg]),)

    return _record("segment_softmax", y, (logits,), vjp)


def segment_sum(x, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum entries (or rows) of ``x`` sharing a segment id."""
    x = as_tensor(x)
    seg = np.asarray(segments, dtype=np.int64)
    if x.shape[0] != seg.size:
        raise ValueError(f"segment_sum: {x.shape[0]} rows vs {seg.size} segment ids")
    if x.ndim == 1:
        out = np.bincount(seg, weights=x.data, minlength=num_segments)
    else:
        M = sp.csr_matrix((np.ones(seg.size), (seg, np.arange(seg.size))), shape=(num_segments, seg.size))
        out = np.asarray(M @ x.data)
    return _record("segment_sum", out, (x,), lambda g: (g[seg],))


def spmm(values, rows: np.ndarray, cols: np.ndarray, dense, num_rows: int) -> Tensor:
    """``out[r] = sum_e values[e] * dense[cols[e]]`` over entries with ``rows[e] == r``."""
    values, dense = as_tensor(values), as_tensor(dense)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if values.shape != rows.shape or rows.shape != cols.shape:
        raise ValueError("spmm: values/rows/cols must be equal-length vectors")
    if dense.ndim != 2:
        raise ValueError("spmm: dense operand must be a matrix")
    M = sp.csr_matrix((values.data, (rows, cols)), shape=(num_rows, dense.shape[0]))
    out = np.asarray(M @ dense.data)

    def vjp(g):
        gv = np.einsum("ij,ij->i", g[rows], dense.data[cols])
        return gv, np.asarray(M.T @ g)

    return _record("spmm", out, (values, dense), vjp)
