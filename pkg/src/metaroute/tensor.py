"""A small reverse-mode automatic differentiation engine on numpy arrays.

Values are float64.  Each op records its inputs and a closure that pushes
the output gradient back to them; :func:`backward` walks the recorded graph
in reverse topological order.  Broadcasting is deliberately limited to
adding or multiplying by a trailing bias vector, everything else must have
matching shapes.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Run ops without recording the graph (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    def zero_grad(self):
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return swap_last(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data, op=op)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _shape_error(name: str, a, b):
    return ValueError(f"{name}: incompatible shapes {tuple(a)} and {tuple(b)}")


def _broadcast_kind(name: str, a: np.ndarray, b: np.ndarray) -> str:
    if a.shape == b.shape:
        return "same"
    if b.ndim == 0 or b.size == 1 and b.ndim <= 1:
        return "scalar"
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return "bias"
    raise _shape_error(name, a.shape, b.shape)


def _reduce_to(g: np.ndarray, kind: str, shape) -> np.ndarray:
    if kind == "same":
        return g
    if kind == "scalar":
        return np.asarray(g.sum()).reshape(shape)
    return g.reshape(-1, shape[0]).sum(axis=0)


# elementwise ------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape and a.data.ndim < b.data.ndim:
        a, b = b, a
    kind = _broadcast_kind("add", a.data, b.data)

    def backward(g):
        _acc(a, g)
        _acc(b, _reduce_to(g, kind, b.data.shape))

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    return add(a, scale(_as_tensor(b), -1.0))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape and a.data.ndim < b.data.ndim:
        a, b = b, a
    kind = _broadcast_kind("mul", a.data, b.data)

    def backward(g):
        _acc(a, g * b.data)
        _acc(b, _reduce_to(g * a.data, kind, b.data.shape))

    return _result(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        _acc(a, g * c)

    return _result(a.data * c, (a,), backward, "scale")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        _acc(a, g * (1.0 - y * y))

    return _result(y, (a,), backward, "tanh")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0

    def backward(g):
        _acc(a, g * pos)

    return _result(np.where(pos, a.data, 0.0), (a,), backward, "relu")


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def backward(g):
        _acc(a, g * y * (1.0 - y))

    return _result(y, (a,), backward, "sigmoid")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def backward(g):
        _acc(a, g * y)

    return _result(y, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")

    def backward(g):
        _acc(a, g / a.data)

    return _result(np.log(a.data), (a,), backward, "log")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data > lo) & (a.data < hi)

    def backward(g):
        _acc(a, g * inside)

    return _result(np.clip(a.data, lo, hi), (a,), backward, "clip")


# reductions -------------------------------------------------------------------

def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.data.shape))

    return _result(y, (a,), backward, "sum")


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# linear algebra and shape -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` where ``b`` is a matrix or has the same leading dims as ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    A, Bm = a.data, b.data
    ok = A.ndim >= 2 and _matmul_ok(A, Bm)
    if not ok:
        raise _shape_error("matmul", A.shape, Bm.shape)
    y = A @ Bm

    def backward(g):
        if a.requires_grad:
            _acc(a, g @ np.swapaxes(Bm, -1, -2))
        if b.requires_grad:
            if Bm.ndim == 2 and A.ndim > 2:
                _acc(b, A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
            else:
                _acc(b, np.swapaxes(A, -1, -2) @ g)

    return _result(y, (a, b), backward, "matmul")


def _matmul_ok(A: np.ndarray, Bm: np.ndarray) -> bool:
    if Bm.ndim == 2:
        return A.shape[-1] == Bm.shape[0]
    return Bm.ndim == A.ndim and A.shape[:-2] == Bm.shape[:-2] and A.shape[-1] == Bm.shape[-2]


def swap_last(a: Tensor) -> Tensor:
    def backward(g):
        _acc(a, np.swapaxes(g, -1, -2))

    return _result(np.swapaxes(a.data, -1, -2), (a,), backward, "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.data.shape

    def backward(g):
        _acc(a, g.reshape(src))

    return _result(a.data.reshape(shape), (a,), backward, "reshape")


def expand(a: Tensor, axis: int, n: int) -> Tensor:
    """Insert ``axis`` and repeat ``a`` ``n`` times along it."""
    y = np.repeat(np.expand_dims(a.data, axis), n, axis=axis)

    def backward(g):
        _acc(a, g.sum(axis=axis))

    return _result(y, (a,), backward, "expand")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    try:
        y = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise _shape_error("concat", parts[0].shape, parts[-1].shape) from None
    sizes = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def backward(g):
        for p, gp in zip(parts, np.split(g, sizes, axis=axis)):
            _acc(p, gp)

    return _result(y, parts, backward, "concat")


def gather(a: Tensor, index: np.ndarray) -> Tensor:
    """Per-batch row selection: ``out[b] = a[b, index[b]]``."""
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim < 2 or index.shape != (a.data.shape[0],):
        raise _shape_error("gather", a.data.shape, index.shape)
    rows = np.arange(index.shape[0])
    y = a.data[rows, index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, index), g)
        _acc(a, full)

    return _result(y, (a,), backward, "gather")


# normalisations -------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _acc(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, (a,), backward, "softmax")


def masked_softmax(a: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax restricted to entries where ``mask`` is true; others get exactly 0."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.data.shape:
        raise _shape_error("masked_softmax", a.data.shape, mask.shape)
    if np.any(~mask.any(axis=axis)):
        raise ValueError("empty support")
    z = np.where(mask, a.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _acc(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, (a,), backward, "masked_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gamma * xhat + beta``."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise _shape_error("layer_norm", x.data.shape, gamma.data.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            _acc(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            _acc(beta, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            _acc(x, gx)

    return _result(y, (x, gamma, beta), backward, "layer_norm")


# backward pass ----------------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node is not loss:
                node.grad = None


def grad_of(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Zero the leaves, run backward and return their gradients (zeros if unused)."""
    params = list(params)
    for p in params:
        p.grad = None
    backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
