"""Dense-tensor engine with reverse-mode differentiation.

Tensors wrap contiguous numpy arrays and record the operations that
produced them; calling :meth:`Tensor.backward` on a scalar walks the
recorded tape once in reverse topological order and accumulates
gradients additively into every node that requires them.

Every primitive checks its output for NaN/Inf and raises
:class:`NonFiniteError` instead of propagating silent garbage.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import DegenerateRowError, NonFiniteError, ParameterError, ShapeError


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return np.ascontiguousarray(arr)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` by summing broadcast axes."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Immutable dense array node in a computation tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _backward: Optional[Callable] = None):
        self.data = _as_array(data, dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.item())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    # -- tape ----------------------------------------------------------------

    def build_tape(self) -> list["Tensor"]:
        """Topologically ordered record of every node reachable from self."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable node's ``grad``.

        ``self`` must be a scalar. Gradients add across calls; use
        :func:`zero_grads` (or clear ``grad`` manually) between steps.
        """
        if self.data.size != 1:
            raise ShapeError("backward requires a scalar loss")
        tape = self.build_tape()
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(tape):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g.reshape(node.data.shape)
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = pg.astype(parent.data.dtype, copy=True)
                else:
                    acc += pg

    # -- arithmetic ----------------------------------------------------------

    @staticmethod
    def _lift(x, like: "Tensor") -> "Tensor":
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=like.data.dtype))

    def __add__(self, other):
        other = Tensor._lift(other, self)
        out = _make(self.data + other.data, (self, other), "add",
                    lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)))
        return out

    __radd__ = __add__

    def __neg__(self):
        return _make(-self.data, (self,), "neg", lambda g: (-g,))

    def __sub__(self, other):
        other = Tensor._lift(other, self)
        return _make(self.data - other.data, (self, other), "sub",
                     lambda g: (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)))

    def __rsub__(self, other):
        return Tensor._lift(other, self) - self

    def __mul__(self, other):
        other = Tensor._lift(other, self)
        return _make(self.data * other.data, (self, other), "mul",
                     lambda g: (_unbroadcast(g * other.data, self.shape),
                                _unbroadcast(g * self.data, other.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other, self)
        return _make(self.data / other.data, (self, other), "div",
                     lambda g: (_unbroadcast(g / other.data, self.shape),
                                _unbroadcast(-g * self.data / other.data ** 2, other.shape)))

    def __rtruediv__(self, other):
        return Tensor._lift(other, self) / self

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return _make(self.data.reshape(shape), (self,), "reshape",
                     lambda g: (g.reshape(old),))

    def swapaxes(self, a: int, b: int):
        return _make(np.ascontiguousarray(self.data.swapaxes(a, b)), (self,), "swapaxes",
                     lambda g: (g.swapaxes(a, b),))

    def __getitem__(self, idx):
        def back(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            return (full,)
        return _make(self.data[idx], (self,), "getitem", back)

    # -- reductions / elementwise ----------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        def back(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, self.shape).copy(),)
        return _make(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum", back)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def exp(self):
        out_data = np.exp(self.data)
        return _make(out_data, (self,), "exp", lambda g: (g * out_data,))

    def log(self):
        return _make(np.log(self.data), (self,), "log", lambda g: (g / self.data,))

    def tanh(self):
        out_data = np.tanh(self.data)
        return _make(out_data, (self,), "tanh", lambda g: (g * (1.0 - out_data ** 2),))

    def sigmoid(self):
        out_data = _sigmoid_stable(self.data)
        return _make(out_data, (self,), "sigmoid",
                     lambda g: (g * out_data * (1.0 - out_data),))

    def relu(self):
        keep = self.data > 0
        return _make(np.where(keep, self.data, 0.0), (self,), "relu",
                     lambda g: (g * keep,))

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient passes through only where unclamped."""
        inside = (self.data >= lo) & (self.data <= hi)
        return _make(np.clip(self.data, lo, hi), (self,), "clip",
                     lambda g: (g * inside,))

    def cumsum(self, axis: int = -1):
        return _make(np.cumsum(self.data, axis=axis), (self,), "cumsum",
                     lambda g: (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),))


def _make(data: np.ndarray, parents: tuple, op: str, backward: Callable) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data, _parents=parents, _backward=backward)
    if not out.requires_grad:
        out._parents = ()
        out._backward = None
    return out


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- free-function primitives ---------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes broadcast as in numpy.matmul."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul requires tensors with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")

    def back(g):
        ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape)
        return (ga, gb)

    return _make(np.matmul(a.data, b.data), (a, b), "matmul", back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), "concat", back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.moveaxis(g, axis, 0))

    return _make(np.stack([t.data for t in tensors], axis=axis),
                 tuple(tensors), "stack", back)


def softmax_lastdim(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Probability-normalize the last axis, optionally over a boolean mask.

    Masked entries come out exactly 0 and receive no gradient. A row with
    every entry masked raises :class:`DegenerateRowError`.
    """
    data = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        if not mask.any(axis=-1).all():
            raise DegenerateRowError("softmax row with all entries masked")
        shifted = np.where(mask, data, -np.inf)
        shifted = shifted - shifted.max(axis=-1, keepdims=True)
        ex = np.where(mask, np.exp(shifted), 0.0)
    else:
        shifted = data - data.max(axis=-1, keepdims=True)
        ex = np.exp(shifted)
    out_data = ex / ex.sum(axis=-1, keepdims=True)

    def back(g):
        if mask is not None:
            g = g * mask
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return ((g - dot) * out_data,)

    return _make(out_data, (x,), "softmax", back)


def conv1d_seq(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Valid 1-D convolution along the second-to-last axis.

    ``x`` has shape (..., L, d), ``kernel`` (k, d, d_out), ``bias`` (d_out,);
    the output has shape (..., L-k+1, d_out). Stride is fixed at 1.
    """
    k, d, d_out = kernel.shape
    length = x.shape[-2]
    if x.shape[-1] != d:
        raise ShapeError(f"conv1d_seq channel mismatch: {x.shape[-1]} vs {d}")
    if k > length:
        raise ShapeError(f"conv1d_seq kernel length {k} exceeds sequence length {length}")
    l_out = length - k + 1

    out_data = np.broadcast_to(bias.data, x.shape[:-2] + (l_out, d_out)).copy()
    for i in range(k):
        out_data += np.matmul(x.data[..., i:i + l_out, :], kernel.data[i])

    def back(g):
        gx = np.zeros_like(x.data)
        gk = np.zeros_like(kernel.data)
        for i in range(k):
            gx[..., i:i + l_out, :] += np.matmul(g, kernel.data[i].T)
            win = x.data[..., i:i + l_out, :]
            gk[i] = np.tensordot(win, g, axes=(tuple(range(win.ndim - 1)),
                                               tuple(range(g.ndim - 1))))
        gb = g.sum(axis=tuple(range(g.ndim - 1)))
        return (gx, gk, gb)

    return _make(out_data, (x, kernel, bias), "conv1d_seq", back)


def dropout(x: Tensor, p: float, mode: str, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: eval mode is the identity, train mode scales by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ParameterError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("train-mode dropout needs a seeded generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    keep = keep.astype(x.data.dtype)
    return _make(x.data * keep, (x,), "dropout", lambda g: (g * keep,))


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
