"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Only the layer set the networks actually need is implemented: elementwise
maps, linear, conv2d, nearest-neighbour 2x upsampling, batch normalization,
concat/slice, and scalar reductions.  Everything is numpy-backed; float64
is the default (gradient checks), training runs in float32.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphError, NumericalError, ShapeError


class Tensor:
    """A dense array plus an optional backward rule linking it to its parents."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_backward_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def validate(self) -> None:
        if not np.all(np.isfinite(self.data)):
            raise NumericalError("tensor contains NaN/Inf")

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode accumulation from a scalar output to all leaves."""
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar, got shape {self.shape}")
        if self._backward_done:
            raise GraphError("backward already ran on this graph; re-run forward first")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        for node in topo:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
        self._backward_done = True

    # arithmetic sugar (scalar or same-shape tensor operands)
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is not None:
        t.grad += g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    if b.data.shape not in ((), a.data.shape):
        raise ShapeError(f"add: shapes {a.shape} vs {b.shape}")
    data = a.data + b.data

    def backward(g):
        _accum(a, g)
        _accum(b, g if b.data.shape else g.sum())

    return _node(data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    if b.data.shape not in ((), a.data.shape):
        raise ShapeError(f"mul: shapes {a.shape} vs {b.shape}")
    data = a.data * b.data

    def backward(g):
        _accum(a, g * b.data)
        gb = g * a.data
        _accum(b, gb if b.data.shape else gb.sum())

    return _node(data, (a, b), backward)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * (0.5 / data))

    return _node(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _node(data, (a,), backward)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, lo, hi)
    pass_mask = (a.data > lo) & (a.data < hi)

    def backward(g):
        _accum(a, g * pass_mask)

    return _node(data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def backward(g):
        _accum(a, g * (a.data > 0))

    return _node(data, (a,), backward)


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    data = np.where(a.data > 0, a.data, alpha * a.data)

    def backward(g):
        _accum(a, g * np.where(a.data > 0, 1.0, alpha).astype(a.dtype))

    return _node(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - data * data))

    return _node(data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accum(a, g * data * (1.0 - data))

    return _node(data, (a,), backward)


ACTIVATIONS = {"relu": relu, "leaky_relu": leaky_relu, "tanh": tanh, "sigmoid": sigmoid}


def activation(a: Tensor, kind: str, alpha: float = 0.2) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(a, alpha)
    try:
        return ACTIVATIONS[kind](a)
    except KeyError:
        raise ShapeError(f"unknown activation {kind!r}") from None


# ---------------------------------------------------------------------------
# reductions / views


def tsum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.dtype)

    def backward(g):
        _accum(a, np.full_like(a.data, g))

    return _node(data.reshape(()), (a,), backward)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    data = np.asarray(a.data.mean(), dtype=a.dtype).reshape(())

    def backward(g):
        _accum(a, np.full_like(a.data, g / n))

    return _node(data, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _node(data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _node(data, tuple(tensors), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = a.data[idx].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _node(data, (a,), backward)


# ---------------------------------------------------------------------------
# layers


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map: (N,F) @ (F,O) + (O,)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.data.shape[1] != weight.data.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    data = x.data @ weight.data
    parents = [x, weight]
    if bias is not None:
        if bias.data.shape != (weight.data.shape[1],):
            raise ShapeError(f"linear: bias {bias.shape} vs output dim {weight.data.shape[1]}")
        data = data + bias.data
        parents.append(bias)

    def backward(g):
        _accum(x, g @ weight.data.T)
        _accum(weight, x.data.T @ g)
        if bias is not None:
            _accum(bias, g.sum(axis=0))

    return _node(data, parents, backward)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with OIKK kernels, zero padding."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d: need rank-4 input/kernel, got {x.shape}/{weight.shape}")
    n, c, h, w = x.data.shape
    o, ci, kh, kw = weight.data.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ci}")
    if kh != kw:
        raise ShapeError(f"conv2d: only square kernels supported, got {kh}x{kw}")
    k, s, p = kh, int(stride), int(padding)
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {k} does not fit input {h}x{w} with pad {p}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]  # N,C,Ho,Wo,K,K
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)
    wmat = weight.data.reshape(o, c * k * k)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    parents = [x, weight]
    if bias is not None:
        if bias.data.shape != (o,):
            raise ShapeError(f"conv2d: bias {bias.shape} vs {o} output channels")
        out = out + bias.data.reshape(1, o, 1, 1)
        parents.append(bias)

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        _accum(weight, (gmat.T @ cols).reshape(weight.data.shape))
        if bias is not None:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        dcols = (gmat @ wmat).reshape(n, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                dxp[:, :, ki:ki + s * (ho - 1) + 1:s, kj:kj + s * (wo - 1) + 1:s] += dcols[:, :, :, :, ki, kj]
        _accum(x, dxp[:, :, p:p + h, p:p + w] if p else dxp)

    return _node(np.ascontiguousarray(out), parents, backward)


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Each pixel of an NCHW tensor becomes a 2x2 block."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_nearest2x: need rank-4 input, got {x.shape}")
    data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        n, c, h2, w2 = g.shape
        _accum(x, g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return _node(data, (x,), backward)


class BatchNormStats:
    """Running mean/var for one batch-norm layer, updated in train mode."""

    def __init__(self, channels: int, dtype=np.float64):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def batch_norm(x: Tensor, weight: Tensor, bias: Tensor, stats: BatchNormStats,
               training: bool, eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Per-channel normalization of NCHW over N,H,W statistics plus affine."""
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm: need rank-4 input, got {x.shape}")
    n, c, h, w = x.data.shape
    if weight.data.shape != (c,) or bias.data.shape != (c,):
        raise ShapeError(f"batch_norm: affine params must have shape ({c},)")
    axes = (0, 2, 3)
    if training:
        if n < 2:
            raise ShapeError("batch_norm: train mode requires batch size >= 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        stats.mean[:] = (1.0 - momentum) * stats.mean + momentum * mu
        stats.var[:] = (1.0 - momentum) * stats.var + momentum * var
    else:
        mu = stats.mean.astype(x.dtype)
        var = stats.var.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    data = weight.data[None, :, None, None] * xhat + bias.data[None, :, None, None]

    def backward(g):
        _accum(bias, g.sum(axis=axes))
        _accum(weight, (g * xhat).sum(axis=axes))
        gx = g * weight.data[None, :, None, None]
        if training:
            mean_gx = gx.mean(axis=axes)[None, :, None, None]
            mean_gx_xhat = (gx * xhat).mean(axis=axes)[None, :, None, None]
            _accum(x, inv[None, :, None, None] * (gx - mean_gx - xhat * mean_gx_xhat))
        else:
            _accum(x, gx * inv[None, :, None, None])

    return _node(data, (x, weight, bias), backward)


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """Bias-corrected Adam over a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float = 0.002,
                 beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
