"""Dense float64 tensors with a reverse-mode differentiation tape.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure propagating the upstream gradient to them.  ``backward`` linearises
the recorded graph into a :class:`Tape` (topological order) and walks it once
in reverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-12


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class DegenerateRowError(ValueError):
    """Raised when a softmax row has no admissible entries."""


class ContractError(ValueError):
    """Raised when a caller violates an operation's precondition."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = "leaf"):
        arr = np.array(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], None] | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = g.reshape(t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=parents if req else (), _backward=backward_fn if req else None, op=op)


# ---------------------------------------------------------------------------
# tape and backward
# ---------------------------------------------------------------------------


@dataclass
class Tape:
    """Recorded operations in topological order (inputs before outputs)."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every differentiable ancestor."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return Tape([])
    tape = Tape.from_output(loss)
    upstream: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = upstream.pop(id(node), None)
        if g is None:
            g = np.zeros_like(node.data)
        if node._backward is None:
            _accumulate(node, g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = upstream.get(id(parent))
            upstream[id(parent)] = pg if prev is None else prev + pg
    return tape


# ---------------------------------------------------------------------------
# binary / elementwise ops
# ---------------------------------------------------------------------------


def _rowvec(big: Tensor, small: Tensor) -> bool:
    """True when ``small`` is a row vector broadcastable over matrix ``big``."""
    if big.data.ndim != 2:
        return False
    d = big.shape[1]
    return small.shape in ((d,), (1, d))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0).reshape(shape)


def _check_binary(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape == b.shape or _rowvec(a, b) or _rowvec(b, a):
        return
    raise DimensionError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    """``log(1 + exp(a))`` evaluated without overflow."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _make(out, (a,), lambda g: (g * sig,), "softplus")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """Natural log of ``max(a, floor)``; zero gradient where the clamp is active."""
    x = a.data
    active = x > floor
    safe = np.where(active, x, floor)

    def bw(g):
        return (np.where(active, g / safe, 0.0),)

    return _make(np.log(safe), (a,), bw, "log")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat_cols needs at least one tensor")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.data.ndim != 2 for p in parts):
        raise DimensionError(f"concat_cols: incompatible shapes {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bw, "concat_cols")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not 0 <= start <= stop <= a.shape[1]:
        raise DimensionError(f"slice_cols: bad range [{start}, {stop}) for shape {a.shape}")

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _make(a.data[:, start:stop].copy(), (a,), bw, "slice_cols")


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        return _make(np.array(a.data.sum()), (a,), lambda g: (np.full_like(a.data, float(g)),), "reduce_sum")
    out = a.data.sum(axis=axis)

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    return _make(out, (a,), bw, "reduce_sum")


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    if count == 0:
        raise ContractError("reduce_mean over an empty axis")
    return scale(reduce_sum(a, axis), 1.0 / count)


# ---------------------------------------------------------------------------
# row / segment ops used by message passing and attention
# ---------------------------------------------------------------------------


def gather_rows(a: Tensor, idx) -> Tensor:
    """``a[idx]`` for an integer index vector; backward scatters back."""
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), bw, "gather_rows")


def segment_sum(a: Tensor, row_ptr) -> Tensor:
    """Sum consecutive row blocks ``a[row_ptr[i]:row_ptr[i+1]]`` into row ``i``."""
    row_ptr = np.asarray(row_ptr, dtype=np.int64)
    if row_ptr[-1] != a.shape[0]:
        raise DimensionError(f"segment_sum: row_ptr ends at {row_ptr[-1]} but input has {a.shape[0]} rows")
    seg = np.repeat(np.arange(len(row_ptr) - 1), np.diff(row_ptr))
    out = np.zeros((len(row_ptr) - 1,) + a.shape[1:])
    np.add.at(out, seg, a.data)
    return _make(out, (a,), lambda g: (g[seg],), "segment_sum")


def scale_rows(a: Tensor, w: Tensor) -> Tensor:
    """Multiply row ``r`` of matrix ``a`` by scalar ``w[r]``."""
    a, w = as_tensor(a), as_tensor(w)
    if a.data.ndim != 2 or w.shape != (a.shape[0],):
        raise DimensionError(f"scale_rows: cannot scale {a.shape} by {w.shape}")

    def bw(g):
        return g * w.data[:, None], (g * a.data).sum(axis=1)

    return _make(a.data * w.data[:, None], (a, w), bw, "scale_rows")


def spmm(matrix, a: Tensor) -> Tensor:
    """Constant sparse (scipy) matrix times differentiable dense ``a``."""
    if matrix.shape[1] != a.shape[0]:
        raise DimensionError(f"spmm: cannot multiply {matrix.shape} by {a.shape}")
    mt = matrix.T.tocsr()
    return _make(np.asarray(matrix @ a.data), (a,), lambda g: (np.asarray(mt @ g),), "spmm")


def _segment_ids(row_ptr: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(row_ptr) - 1), np.diff(row_ptr))


def segment_softmax(values: Tensor, row_ptr) -> Tensor:
    """Softmax of an edge-packed vector within each CSR row."""
    row_ptr = np.asarray(row_ptr, dtype=np.int64)
    counts = np.diff(row_ptr)
    if values.data.ndim != 1 or row_ptr[-1] != values.shape[0]:
        raise DimensionError(f"segment_softmax: {values.shape} does not match row_ptr ending at {row_ptr[-1]}")
    if np.any(counts == 0):
        bad = int(np.flatnonzero(counts == 0)[0])
        raise DegenerateRowError(f"row {bad} has no unmasked entries")
    seg = _segment_ids(row_ptr)
    starts = row_ptr[:-1]
    x = values.data
    mx = np.maximum.reduceat(x, starts)
    e = np.exp(x - mx[seg])
    denom = np.add.reduceat(e, starts)
    out = e / denom[seg]

    def bw(g):
        dot = np.add.reduceat(g * out, starts)
        return (out * (g - dot[seg]),)

    return _make(out, (values,), bw, "segment_softmax")


def row_softmax_masked(x: Tensor, mask) -> Tensor:
    """Per-row softmax restricted to admissible entries.

    ``mask`` is either a boolean matrix (dense form, masked entries come out
    exactly 0) or anything carrying a CSR ``row_ptr`` (edge-packed form).
    """
    if hasattr(mask, "row_ptr"):
        return segment_softmax(x, mask.row_ptr)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape or x.data.ndim != 2:
        raise DimensionError(f"row_softmax_masked: mask {mask.shape} vs input {x.shape}")
    empty = ~mask.any(axis=1)
    if empty.any():
        raise DegenerateRowError(f"row {int(np.flatnonzero(empty)[0])} has no unmasked entries")
    z = np.where(mask, x.data, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), bw, "row_softmax_masked")


def log_softmax_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"log_softmax_rows needs a matrix, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=1, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax_rows")


def softmax_rows(x: Tensor) -> Tensor:
    return row_softmax_masked(x, np.ones(x.shape, dtype=bool))


def where_rows(a: Tensor, rows) -> Tensor:
    """Select a subset of rows by boolean mask."""
    return gather_rows(a, np.flatnonzero(np.asarray(rows, dtype=bool)))


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
