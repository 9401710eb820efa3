"""Dense float64 matrices with tape-based reverse-mode differentiation.

Every tensor is two-dimensional. An operation whose inputs require gradients
records its parents and a backward rule on the output; :func:`backward` walks
that graph once in reverse topological order and returns the gradient of a
1x1 loss with respect to every leaf that requires gradients.

Only the operations needed by two-layer GCNs, softmax/log losses and cosine
edge scoring are provided.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

LOG_FLOOR = 1e-12
NORM_FLOOR = 1e-12

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got array of shape {arr.shape}")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = "leaf"
        self._consumed = False

    @classmethod
    def _result(cls, arr: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
        out = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        out.data = arr
        out.grad = None
        out._op = op
        out._consumed = False
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __add__(self, other) -> Tensor:
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other) -> Tensor:
        return sub(_as_tensor(other, self.shape), self)

    def __mul__(self, other) -> Tensor:
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __matmul__(self, other) -> Tensor:
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _as_tensor(x, shape: tuple[int, int] | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)) and shape is not None:
        return Tensor(np.full(shape, float(x)))
    return Tensor(x)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> bool:
    """Return True when ``b`` is a row vector broadcast over ``a``."""
    if a.shape == b.shape:
        return False
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return True
    raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    av, bv = a.data, b.data

    def backward(g):
        ga = g @ bv.T if a.requires_grad else None
        gb = av.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor._result(av @ bv, (a, b), backward, "matmul")


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.shape)
    row = _check_broadcast(a, b, "add")

    def backward(g):
        return g, (g.sum(axis=0, keepdims=True) if row else g)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.shape)
    row = _check_broadcast(a, b, "sub")

    def backward(g):
        return g, -(g.sum(axis=0, keepdims=True) if row else g)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.shape)
    row = _check_broadcast(a, b, "mul")
    av, bv = a.data, b.data

    def backward(g):
        ga = g * bv if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = g * av
            if row:
                gb = gb.sum(axis=0, keepdims=True)
        return ga, gb

    return Tensor._result(av * bv, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor._result(a.data * c, (a,), lambda g: (g * c,), "scale")


def transpose(a: Tensor) -> Tensor:
    return Tensor._result(a.data.T, (a,), lambda g: (g.T,), "transpose")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    return Tensor._result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def clamped_log(a: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """log(max(x, floor)); the gradient is zero where the floor is active."""
    clipped = np.maximum(a.data, floor)
    live = a.data > floor

    def backward(g):
        return (np.where(live, g / clipped, 0.0),)

    return Tensor._result(np.log(clipped), (a,), backward, "clamped_log")


def power(a: Tensor, exponent: float) -> Tensor:
    av = a.data

    def backward(g):
        return (g * exponent * av ** (exponent - 1.0),)

    return Tensor._result(av**exponent, (a,), backward, "power")


def dropout_mask(shape: tuple[int, int], rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: survivors carry 1/(1-rate), dropped entries 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(a: Tensor, mask: np.ndarray | None) -> Tensor:
    if mask is None:
        return a
    if mask.shape != a.shape:
        raise ShapeError(f"dropout: mask {mask.shape} does not match {a.shape}")
    return Tensor._result(a.data * mask, (a,), lambda g: (g * mask,), "dropout")


def row_softmax(a: Tensor) -> Tensor:
    if a.shape[1] < 2:
        raise ShapeError(f"row_softmax needs at least two columns, got {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return Tensor._result(p, (a,), backward, "row_softmax")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor._result(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.shape[0] * a.shape[1]
    return scale(sum_all(a), 1.0 / n)


def row_sum(a: Tensor) -> Tensor:
    cols = a.shape[1]
    return Tensor._result(
        a.data.sum(axis=1, keepdims=True), (a,), lambda g: (np.repeat(g, cols, axis=1),), "row_sum"
    )


def gather_rows(a: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor._result(a.data[idx], (a,), backward, "gather_rows")


def take_entries(a: Tensor, rows, cols) -> Tensor:
    """Column vector of ``a[rows[k], cols[k]]``; repeated index pairs accumulate."""
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    if r.shape != c.shape or r.ndim != 1:
        raise ShapeError("take_entries: rows and cols must be equal-length 1-D arrays")
    shape = a.shape
    flat = r * shape[1] + c

    def backward(g):
        out = np.bincount(flat, weights=g[:, 0], minlength=shape[0] * shape[1])
        return (out.reshape(shape),)

    return Tensor._result(a.data[r, c].reshape(-1, 1), (a,), backward, "take_entries")


def row_normalize(a: Tensor, floor: float = NORM_FLOOR) -> Tensor:
    """Scale each row to unit Euclidean norm; rows with norm < floor become zero."""
    norms = np.sqrt((a.data**2).sum(axis=1, keepdims=True))
    live = norms >= floor
    safe = np.where(live, norms, 1.0)
    out = np.where(live, a.data / safe, 0.0)

    def backward(g):
        radial = (g * out).sum(axis=1, keepdims=True)
        return (np.where(live, (g - out * radial) / safe, 0.0),)

    return Tensor._result(out, (a,), backward, "row_normalize")


def scale_rows_cols(m: Tensor, r: Tensor) -> Tensor:
    """diag(r) @ m @ diag(r) for a square ``m`` and column vector ``r``."""
    n = m.shape[0]
    if m.shape != (n, n) or r.shape != (n, 1):
        raise ShapeError(f"scale_rows_cols: need square matrix and column vector, got {m.shape}, {r.shape}")
    mv, rv = m.data, r.data
    outer = rv * rv.T

    def backward(g):
        gm = g * outer if m.requires_grad else None
        gr = None
        if r.requires_grad:
            gmv = g * mv
            gr = gmv @ rv + gmv.T @ rv
        return gm, gr

    return Tensor._result(mv * outer, (m, r), backward, "scale_rows_cols")


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Differentiate a 1x1 ``loss``; returns gradients keyed by leaf tensor.

    The tape below ``loss`` is released afterwards, so a second call on the
    same loss raises.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    if loss._consumed:
        raise RuntimeError("tape for this loss was already consumed by backward()")
    if not loss.requires_grad:
        return {}

    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            leaves[node] = g
            node.grad = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node._consumed = True
            node.requires_grad = False
    return leaves
