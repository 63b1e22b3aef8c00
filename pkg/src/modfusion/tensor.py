"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable op records its
inputs and a backward closure on the output; :func:`backward` walks that record
in reverse topological order and accumulates gradients into every leaf that
requires them.

Only the op set the multimodal models need is provided. Broadcasting follows
numpy rules for elementwise ops and batched ``matmul``; gradients are summed
back down to the input shapes.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_grad_enabled = True


class NonFiniteError(ArithmeticError):
    """Raised when a forward op produces NaN or Inf."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class MaskError(ValueError):
    """Raised when a softmax mask leaves a row with no admissible entry."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A numpy array plus an optional gradient buffer and its place on the tape."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype or DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

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
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _record(a.data + b.data, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)

    return _record(-a.data, (a,), backward, "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _record(a.data * b.data, (a, b), backward, "mul")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - y * y))

    return _record(y, (a,), backward, "tanh")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)

    def backward(g):
        _accumulate(a, g * y * (1.0 - y))

    return _record(y, (a,), backward, "sigmoid")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0

    def backward(g):
        _accumulate(a, g * pos)

    return _record(np.where(pos, a.data, 0.0), (a,), backward, "relu")


# ---------------------------------------------------------------------------
# shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}") from exc

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _record(out, (a, b), backward, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _record(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _record(a.data.transpose(axes), (a,), backward, "transpose")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def getitem(a: Tensor, index) -> Tensor:
    """Basic (non-gathering) indexing."""

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[index] += g
            _accumulate(a, full)

    return _record(np.array(a.data[index]), (a,), backward, "getitem")


def take_rows(table: Tensor, indices, padding_idx: int | None = None) -> Tensor:
    """Gather rows of a 2-D table; ``padding_idx`` rows come out as zeros."""
    idx = np.asarray(indices, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"take_rows: index out of range for table with {n} rows")
    out = table.data[idx]
    keep = None
    if padding_idx is not None:
        keep = idx != padding_idx
        out = out * keep[..., None]

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            gg = g if keep is None else g * keep[..., None]
            np.add.at(full, idx.reshape(-1), gg.reshape(-1, table.shape[1]))
            _accumulate(table, full)

    return _record(out, (table,), backward, "take_rows")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(sl)])

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _record(np.asarray(out), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# ---------------------------------------------------------------------------
# normalisation-style ops


def softmax(x: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Row-max stabilised softmax; ``mask`` (broadcastable bool) zeroes entries.

    Masked entries come out exactly 0. A row with no admissible entry raises
    :class:`MaskError`.
    """
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not np.all(m.any(axis=axis)):
            raise MaskError("softmax: a row is fully masked")
        z = np.where(m, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _record(y, (x,), backward, "softmax")


def standardize(x: Tensor, axis: int = -1, eps: float = 1e-5, mask=None) -> Tensor:
    """Zero-mean, unit-variance along ``axis``; biased variance, ``eps`` inside the root.

    ``mask`` (broadcastable to ``x``) restricts which entries contribute to the
    statistics; every entry is still normalised with them.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    data = x.data
    if mask is None:
        w = None
        count = data.shape[axis]
        mu = data.mean(axis=axis, keepdims=True)
        d = data - mu
        var = (d * d).mean(axis=axis, keepdims=True)
    else:
        w = np.broadcast_to(np.asarray(mask, dtype=data.dtype), data.shape)
        count = w.sum(axis=axis, keepdims=True)
        if np.any(count == 0):
            raise MaskError("standardize: no unmasked entries along axis")
        mu = (w * data).sum(axis=axis, keepdims=True) / count
        d = data - mu
        var = (w * d * d).sum(axis=axis, keepdims=True) / count
    inv = 1.0 / np.sqrt(var + eps)
    xhat = d * inv

    def backward(g):
        sg = g.sum(axis=axis, keepdims=True)
        sgx = (g * xhat).sum(axis=axis, keepdims=True)
        if w is None:
            dx = (g - sg / count - xhat * sgx / count) * inv
        else:
            dx = (g - w * sg / count - w * xhat * sgx / count) * inv
        _accumulate(x, dx)

    return _record(xhat, (x,), backward, "standardize")


def layer_norm(x: Tensor, gamma, beta, eps: float = 1e-5, axis: str = "feature", mask=None) -> Tensor:
    """Layer normalisation of a ``[..., T, C]`` tensor.

    ``axis="feature"`` standardises each time step over its channels.
    ``axis="temporal"`` takes per-channel statistics over time steps (``mask``
    of shape ``[..., T]`` selects the valid ones). ``gamma``/``beta`` are
    ``[C]`` or anything broadcastable against ``x`` (per-sample modulation).
    """
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape[-1] != c or beta.shape[-1] != c:
        raise ShapeError(f"layer_norm: {x.shape} with gamma {gamma.shape}, beta {beta.shape}")
    if axis == "feature":
        xhat = standardize(x, axis=-1, eps=eps)
    elif axis == "temporal":
        if x.ndim < 2:
            raise ShapeError("layer_norm: temporal axis needs a [T, C] input")
        m = None if mask is None else np.asarray(mask, dtype=bool)[..., None]
        xhat = standardize(x, axis=-2, eps=eps, mask=m)
    else:
        raise ValueError(f"unknown normalisation axis {axis!r}")
    return add(mul(xhat, gamma), beta)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, keep)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean softmax cross-entropy of ``[N, K]`` logits against integer targets."""
    t = np.asarray(targets, dtype=np.int64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), t].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), t] -= 1.0
        _accumulate(logits, g * p / n)

    return _record(np.asarray(loss), (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# backward pass and numerical oracle


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    """Populate ``.grad`` of every requires-grad leaf reachable from ``loss``.

    Gradients accumulate into existing leaf buffers; call ``zero_grad`` first
    for a fresh pass.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            node.grad = None
        if node._parents:
            # the graph is single-use; drop references so memory is freed early
            node._parents = ()
            node._backward = None


def finite_difference_grad(f: Callable[[], float], x: Tensor, eps: float = 1e-3,
                           indices: Iterable[int] | None = None) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``x.data``.

    ``x`` is perturbed in place and restored. When ``indices`` (flat positions)
    is given only those entries are filled; the rest stay zero.
    """
    flat = x.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f())
        flat[i] = orig - eps
        fm = float(f())
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * eps)
    return out.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)
