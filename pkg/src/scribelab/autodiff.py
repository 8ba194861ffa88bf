"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operator's backward rule is written out by hand; the engine only
handles graph bookkeeping. This is the substrate for the transformer
models, and the gradient-check tests hold each rule to central finite
differences. Gradients are only computed for tensors that require them,
so frozen base weights cost nothing during adapter training.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Backpropagate from this (scalar) tensor through the graph."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _result(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * s

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return _result(data, (a,), backward)


def add_const(a: Tensor, c: np.ndarray) -> Tensor:
    data = a.data + c

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))

    return _result(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _result(data, (a, b), backward)


# ---------------------------------------------------------------------------
# Shape


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old))

    return _result(data, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    data = np.transpose(a.data, axes)
    inverse = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inverse))

    return _result(data, (a,), backward)


def select_position(a: Tensor, pos: int) -> Tensor:
    """a[:, pos, :] for a (B, T, D) tensor."""
    data = a.data[:, pos, :]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, pos, :] = g
            a._accumulate(full)

    return _result(data, (a,), backward)


# ---------------------------------------------------------------------------
# Nonlinearities and normalization


def gelu(a: Tensor) -> Tensor:
    x = a.data
    phi = 0.5 * (1.0 + erf(x / np.asarray(np.sqrt(2.0), dtype=x.dtype)))
    data = x * phi

    def backward(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) / np.asarray(np.sqrt(2.0 * np.pi), dtype=x.dtype)
            a._accumulate(g * (phi + x * pdf))

    return _result(data, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            a._accumulate(y * (g - dot))

    return _result(y, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - logz

    def backward(g):
        if a.requires_grad:
            a._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _result(y, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mu) * inv_std
    data = gamma.data * x_hat + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate(_unbroadcast(g * x_hat, gamma.data.shape))
        if beta.requires_grad:
            beta._accumulate(_unbroadcast(g, beta.data.shape))
        if x.requires_grad:
            d = x.data.shape[-1]
            gxh = g * gamma.data
            gx = inv_std * (
                gxh
                - gxh.mean(axis=-1, keepdims=True)
                - x_hat * (gxh * x_hat).sum(axis=-1, keepdims=True) / d
            )
            x._accumulate(gx)

    return _result(data, (x, gamma, beta), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            table._accumulate(full)

    return _result(data, (table,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; callers skip this entirely in inference mode."""
    if p <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    data = a.data * keep

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * keep)

    return _result(data, (a,), backward)


# ---------------------------------------------------------------------------
# Losses


def masked_nll(logprobs: Tensor, targets: np.ndarray, pad_id: int) -> Tensor:
    """Mean negative log-likelihood over non-PAD target positions.

    logprobs: (..., T, V) log-probabilities; targets: (..., T) int ids.
    """
    targets = np.asarray(targets)
    mask = targets != pad_id
    count = int(mask.sum())
    if count == 0:
        raise ValueError("all target positions are PAD; nothing to score")
    picked = np.take_along_axis(logprobs.data, targets[..., None], axis=-1)[..., 0]
    data = np.asarray(-(picked * mask).sum() / count, dtype=logprobs.data.dtype)

    def backward(g):
        if logprobs.requires_grad:
            full = np.zeros_like(logprobs.data)
            np.put_along_axis(
                full,
                targets[..., None],
                (-(g * mask) / count)[..., None].astype(logprobs.data.dtype),
                axis=-1,
            )
            logprobs._accumulate(full)

    return _result(data, (logprobs,), backward)


def mean_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.mean(), dtype=a.data.dtype)
    size = a.data.size

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, g / size))

    return _result(data, (a,), backward)
