"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Tensors wrap float64 ndarrays and record a tape of parent nodes with local
backward closures. Calling ``backward()`` on a scalar output accumulates
gradients into every reachable tensor created with ``requires_grad=True``.

Only the primitives needed by the toy SURT model are implemented. All math is
64-bit; ``no_grad()`` disables tape recording for inference paths.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- graph plumbing -----------------------------------------------------

    def _tracked(self, *parents: "Tensor") -> bool:
        return _GRAD_ENABLED and any(
            p.requires_grad or p._parents for p in parents
        )

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Reverse sweep from this node. Requires a scalar unless `seed` given."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() seed must be scalar, got shape {self.data.shape}"
                )
            seed = np.ones_like(self.data)

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(seed, dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic ---------------------------------------------------------

    def _lift(self, other):
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._lift(other)
        out_data = self.data + other.data
        out = Tensor(out_data)
        if self._tracked(self, other):
            a_shape, b_shape = self.data.shape, other.data.shape
            out._parents = (self, other)
            out._backward = lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape))
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data)
        if self._tracked(self):
            out._parents = (self,)
            out._backward = lambda g: (-g,)
        return out

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        out = Tensor(self.data * other.data)
        if self._tracked(self, other):
            a, b = self, other
            out._parents = (a, b)
            out._backward = lambda g: (
                _unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape),
            )
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        out = Tensor(self.data / other.data)
        if self._tracked(self, other):
            a, b = self, other
            out._parents = (a, b)
            out._backward = lambda g: (
                _unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data ** 2), b.data.shape),
            )
        return out

    def __pow__(self, exponent: float):
        out = Tensor(self.data ** exponent)
        if self._tracked(self):
            a = self
            out._parents = (a,)
            out._backward = lambda g: (g * exponent * a.data ** (exponent - 1),)
        return out

    def __matmul__(self, other):
        other = self._lift(other)
        if self.data.shape[-1] != other.data.shape[0 if other.data.ndim <= 2 else -2]:
            raise ShapeError(
                f"matmul: inner dims {self.data.shape} @ {other.data.shape}"
                + (f" (node {self.name})" if self.name else "")
            )
        out = Tensor(self.data @ other.data)
        if self._tracked(self, other):
            a, b = self, other
            def back(g):
                if b.data.ndim == 1:
                    ga = np.outer(g, b.data) if a.data.ndim == 2 else g[..., None] * b.data
                    gb = a.data.T @ g if a.data.ndim == 2 else g * a.data
                    return (_unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape))
                ga = g @ np.swapaxes(b.data, -1, -2)
                gb = np.swapaxes(a.data, -1, -2) @ g
                return (_unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape))
            out._parents = (a, b)
            out._backward = back
        return out

    def __getitem__(self, key):
        out = Tensor(self.data[key])
        if self._tracked(self):
            a = self
            def back(g):
                full = np.zeros_like(a.data)
                np.add.at(full, key, g)
                return (full,)
            out._parents = (a,)
            out._backward = back
        return out

    # -- nonlinearities -----------------------------------------------------

    def tanh(self):
        y = np.tanh(self.data)
        out = Tensor(y)
        if self._tracked(self):
            out._parents = (self,)
            out._backward = lambda g: (g * (1.0 - y * y),)
        return out

    def sigmoid(self):
        y = sigmoid_np(self.data)
        out = Tensor(y)
        if self._tracked(self):
            out._parents = (self,)
            out._backward = lambda g: (g * y * (1.0 - y),)
        return out

    def exp(self):
        y = np.exp(self.data)
        out = Tensor(y)
        if self._tracked(self):
            out._parents = (self,)
            out._backward = lambda g: (g * y,)
        return out

    def log(self):
        out = Tensor(np.log(self.data))
        if self._tracked(self):
            a = self
            out._parents = (a,)
            out._backward = lambda g: (g / a.data,)
        return out

    # -- reductions / reshaping ----------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims))
        if self._tracked(self):
            a = self
            def back(g):
                if axis is None:
                    return (np.broadcast_to(g, a.data.shape).copy(),)
                gg = g if keepdims else np.expand_dims(g, axis)
                return (np.broadcast_to(gg, a.data.shape).copy(),)
            out._parents = (a,)
            out._backward = back
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape))
        if self._tracked(self):
            a = self
            out._parents = (a,)
            out._backward = lambda g: (g.reshape(a.data.shape),)
        return out

    def swapaxes(self, a1, a2):
        out = Tensor(np.swapaxes(self.data, a1, a2))
        if self._tracked(self):
            a = self
            out._parents = (a,)
            out._backward = lambda g: (np.swapaxes(g, a1, a2),)
        return out

    def logsumexp(self, axis=-1, keepdims=False):
        m = np.max(self.data, axis=axis, keepdims=True)
        y = np.log(np.sum(np.exp(self.data - m), axis=axis, keepdims=True)) + m
        out_data = y if keepdims else np.squeeze(y, axis=axis)
        out = Tensor(out_data)
        if self._tracked(self):
            a = self
            soft = np.exp(a.data - y)
            def back(g):
                gg = g if keepdims else np.expand_dims(g, axis)
                return (gg * soft,)
            out._parents = (a,)
            out._backward = back
        return out

    def log_softmax(self, axis=-1):
        lse = self.logsumexp(axis=axis, keepdims=True)
        return self - lse


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    if _GRAD_ENABLED and any(t.requires_grad or t._parents for t in tensors):
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        out._parents = tuple(tensors)
        out._backward = lambda g: tuple(np.split(g, splits, axis=axis))
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))
    if _GRAD_ENABLED and any(t.requires_grad or t._parents for t in tensors):
        n = len(tensors)
        out._parents = tuple(tensors)
        out._backward = lambda g: tuple(
            np.take(g, i, axis=axis) for i in range(n)
        )
    return out


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Embedding lookup: rows of `table` selected by integer `indices`."""
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(table.data[idx])
    if _GRAD_ENABLED and (table.requires_grad or table._parents):
        def back(g):
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            return (full,)
        out._parents = (table,)
        out._backward = back
    return out


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    """Numerically stable sigmoid on raw ndarrays."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def check_finite(t: Tensor, where: str = "") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"non-finite values{' in ' + where if where else ''}")
    return t


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(fn: Callable[[Tensor], Tensor], point: np.ndarray,
               eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn` must be a pure scalar-valued function of one Tensor argument.
    Relative error per coordinate: |a - c| / (|a| + |c| + 1e-12).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    point = np.asarray(point, dtype=np.float64)
    x = Tensor(point.copy(), requires_grad=True)
    out = fn(x)
    if not np.all(np.isfinite(out.data)):
        raise NumericalError("grad_check: fn returned non-finite value")
    out.backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(point)

    worst = 0.0
    flat = point.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        shifted = point.copy().reshape(-1)
        shifted[i] = orig + eps
        with no_grad():
            hi = fn(Tensor(shifted.reshape(point.shape))).data.item()
        shifted[i] = orig - eps
        with no_grad():
            lo = fn(Tensor(shifted.reshape(point.shape))).data.item()
        num = (hi - lo) / (2.0 * eps)
        a = analytic.reshape(-1)[i]
        rel = abs(a - num) / (abs(a) + abs(num) + 1e-12)
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adam with linear warm-up and exponential decay of the learning rate.

    lr(step) = base * step/warmup            while step <= warmup
             = base * decay^(step - warmup)  afterwards
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 3e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 warmup_steps: int = 0, decay: float = 1.0):
        self.params = params
        self.base_lr = lr
        self.betas = betas
        self.eps = eps
        self.warmup_steps = warmup_steps
        self.decay = decay
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def lr_at(self, step: int) -> float:
        if self.warmup_steps > 0 and step <= self.warmup_steps:
            return self.base_lr * step / self.warmup_steps
        return self.base_lr * self.decay ** max(0, step - self.warmup_steps)

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        """Apply one update from `grads` (default: the tensors' .grad)."""
        self.step_count += 1
        lr = self.lr_at(self.step_count)
        b1, b2 = self.betas
        for name, p in self.params.items():
            g = grads.get(name) if grads is not None else p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"NaN/inf gradient for parameter '{name}'")
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / (1 - b1 ** self.step_count)
            vhat = self.v[name] / (1 - b2 ** self.step_count)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
