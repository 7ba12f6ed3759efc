"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the encoder, the contrastive loss and the task heads need
are provided. Every op builds a ``Tensor`` holding its value, its parents and
a closure that pushes the upstream gradient into the parents; ``backward``
runs those closures once each in reverse topological order.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from .errors import NonFiniteGradient, ShapeMismatch

DEGENERATE_NORM = 1e-12


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, parents: tuple = (), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        order = _topo(self)
        self._accumulate(np.ones_like(self.value) if grad is None else grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return add(self, neg(as_tensor(o)))

    def __rsub__(self, o):
        return add(as_tensor(o), neg(self))

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, o):
        if isinstance(o, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / o)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def _topo(root: Tensor) -> list[Tensor]:
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


def _make(value, parents, backward) -> Tensor:
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    rg = any(p.requires_grad for p in parents)
    return Tensor(value, rg, parents if rg else (), backward if rg else None)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.value + b.value, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.value, (a,), lambda g: a._accumulate(-g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.value, b.shape))

    return _make(a.value * b.value, (a, b), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: a._accumulate(g * mask))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: a._accumulate(g * out))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.value), (a,), lambda g: a._accumulate(g / a.value))


def abs_(a: Tensor) -> Tensor:
    # subgradient 0 at the kink
    return _make(np.abs(a.value), (a,), lambda g: a._accumulate(g * np.sign(a.value)))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.value)

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = g * 0.5 / out
        if not np.all(np.isfinite(d)):
            raise NonFiniteGradient("sqrt gradient at 0")
        a._accumulate(d)

    return _make(out, (a,), bw)


def logaddexp(a, b) -> Tensor:
    """log(exp(a) + exp(b)); -inf entries act as absent terms."""
    a, b = as_tensor(a), as_tensor(b)
    out = np.logaddexp(a.value, b.value)

    def bw(g):
        with np.errstate(invalid="ignore"):
            wa = np.where(np.isneginf(a.value), 0.0, np.exp(a.value - out))
            wb = np.where(np.isneginf(b.value), 0.0, np.exp(b.value - out))
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * wa, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * wb, b.shape))

    return _make(out, (a, b), bw)


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)))


# -- reductions / shape ----------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(out, (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def transpose(a: Tensor) -> Tensor:
    return _make(a.value.T, (a,), lambda g: a._accumulate(g.T))


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.value.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))


def take(a: Tensor, idx) -> Tensor:
    out = a.value[idx]

    def bw(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _make(out, (a,), bw)


def concat(ts: list[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t._accumulate(part)

    return _make(np.concatenate([t.value for t in ts], axis=axis), ts, bw)


# -- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.shape[-1] != b.value.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.value.T if b.value.ndim == 2 else np.outer(g, b.value))
        if b.requires_grad:
            b._accumulate(a.value.T @ g if a.value.ndim == 2 else np.outer(a.value, g))

    return _make(a.value @ b.value, (a, b), bw)


def spmm(s, a: Tensor) -> Tensor:
    """Constant (sparse or dense) matrix times a tensor."""
    if s.shape[1] != a.shape[0]:
        raise ShapeMismatch(f"spmm {s.shape} @ {a.shape}")
    st = s.T.tocsr() if sp.issparse(s) else s.T
    out = s @ a.value
    return _make(np.asarray(out), (a,), lambda g: a._accumulate(np.asarray(st @ g)))


def normalize_rows(a: Tensor) -> Tensor:
    """Unit-normalize each row; rows with norm below 1e-12 map to zero."""
    norms = np.linalg.norm(a.value, axis=-1, keepdims=True)
    live = norms >= DEGENERATE_NORM
    inv = np.where(live, 1.0 / np.where(live, norms, 1.0), 0.0)
    y = a.value * inv

    def bw(g):
        proj = (g * y).sum(axis=-1, keepdims=True)
        a._accumulate((g - y * proj) * inv)

    return _make(y, (a,), bw)


def masked_logsumexp(a: Tensor, mask: np.ndarray, axis: int = 1) -> Tensor:
    """log of the sum of exp over entries where mask is true; -inf if none."""
    vals = np.where(mask, a.value, -np.inf)
    m = vals.max(axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        e = np.where(mask, np.exp(vals - m_safe), 0.0)
        s = e.sum(axis=axis, keepdims=True)
        out = np.log(s) + m_safe
    out = np.where(s > 0, out, -np.inf)

    def bw(g):
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(s > 0, e / np.where(s > 0, s, 1.0), 0.0)
        a._accumulate(w * np.expand_dims(g, axis))

    return _make(np.squeeze(out, axis=axis), (a,), bw)


def log_softmax(a: Tensor) -> Tensor:
    m = a.value.max(axis=-1, keepdims=True)
    shifted = a.value - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def bw(g):
        a._accumulate(g - soft * g.sum(axis=-1, keepdims=True))

    return _make(out, (a,), bw)


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 labels."""
    x = logits.value
    y = np.asarray(labels, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"logits {x.shape} vs labels {y.shape}")
    loss = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    p = 0.5 * (1.0 + np.tanh(0.5 * x))
    n = x.size

    def bw(g):
        logits._accumulate(g * (p - y) / n)

    return _make(loss.mean(), (logits,), bw)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate <= 0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, keep)


# -- utilities -------------------------------------------------------------

def cosine_similarity(v1, v2) -> float:
    """v1.v2 / (|v1||v2|), or 0 when either norm is below 1e-12."""
    a = np.asarray(v1, dtype=np.float64).ravel()
    b = np.asarray(v2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeMismatch(f"cosine_similarity {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < DEGENERATE_NORM or nb < DEGENERATE_NORM:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor] | Mapping[str, Tensor],
    eps: float = 1e-5,
) -> float:
    """Largest entrywise |analytic - numeric| / max(1, |numeric|).

    ``f`` is re-evaluated with each parameter entry nudged by +-eps in place;
    the reverse-mode gradient is taken at the unperturbed point.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    plist = list(params.values()) if isinstance(params, Mapping) else list(params)
    for p in plist:
        p.zero_grad()
    out = f()
    out.backward()
    worst = 0.0
    for p in plist:
        analytic = np.zeros_like(p.value) if p.grad is None else p.grad.copy()
        if not np.all(np.isfinite(analytic)):
            raise NonFiniteGradient("reverse-mode gradient is not finite")
        flat = p.value.reshape(-1)
        an = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            if not math.isfinite(num):
                raise NonFiniteGradient("finite difference is not finite")
            worst = max(worst, abs(an[i] - num) / max(1.0, abs(num)))
    return worst
