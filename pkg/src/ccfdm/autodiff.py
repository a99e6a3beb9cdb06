"""Minimal reverse-mode automatic differentiation on numpy arrays.

Every op returns a :class:`Tensor`. When grad mode is on and any input
requires a gradient, the result remembers its parents and a closure that maps
the output gradient to input gradients. The graph lives only as long as the
tensors of one forward pass; parameters are persistent leaf tensors owned by
a :class:`ParameterSet` and receive accumulated gradients in ``.grad``.

Convolutions use channels-last activations ``(N, H, W, C)`` with weights laid
out as ``(out_channels, in_channels, kh, kw)``; valid padding, cross-correlation.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ContractViolation, DivergenceError

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording parents (stop-gradient for a whole block)."""
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
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    arr = np.array(data, dtype=dtype if dtype is not None else np.float64)
    t = Tensor(arr, requires_grad=requires_grad)
    if requires_grad:
        t.grad = np.zeros_like(arr)
    return t


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward_fn)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``."""
    if loss.data.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
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

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg


# --------------------------------------------------------------------------
# elementwise and shape ops


def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # gradient at exactly zero is 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def softplus(a: Tensor) -> Tensor:
    y = np.logaddexp(0.0, a.data)

    def bw(g):
        return (g * (0.5 * (1.0 + np.tanh(0.5 * a.data))),)

    return _node(y.astype(a.dtype, copy=False), (a,), bw)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    pick_a = a.data <= b.data

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _node(np.minimum(a.data, b.data), (a, b), bw)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(y, dtype=a.dtype), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape: tuple) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing."""

    def bw(g):
        out = np.zeros_like(a.data)
        out[index] = g
        return (out,)

    return _node(a.data[index], (a,), bw)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_wrap(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, bw)


def diagonal(a: Tensor) -> Tensor:
    n = a.shape[0]

    def bw(g):
        out = np.zeros_like(a.data)
        out[np.arange(n), np.arange(n)] = g
        return (out,)

    return _node(np.diagonal(a.data).copy(), (a,), bw)


# --------------------------------------------------------------------------
# layers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), bw)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with weight stored as (out_features, in_features)."""
    x = _wrap(x, weight)
    if x.shape[-1] != weight.shape[1]:
        raise ConfigurationError(
            f"dense: input has {x.shape[-1]} features, weight expects {weight.shape[1]}"
        )
    squeeze = x.ndim == 1
    xd = x.data[None, :] if squeeze else x.data
    y = xd @ weight.data.T
    if bias is not None:
        y = y + bias.data

    def bw(g):
        g2 = g[None, :] if squeeze else g
        gx = None
        if x.requires_grad:
            gx = g2 @ weight.data
            gx = gx[0] if squeeze else gx
        gw = g2.T @ xd if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(y[0] if squeeze else y, parents, bw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid cross-correlation of ``x`` (N, H, W, C) with ``weight`` (O, C, kh, kw)."""
    x = _wrap(x, weight)
    if x.ndim != 4:
        raise ConfigurationError(f"conv2d expects (N, H, W, C) input, got shape {x.shape}")
    n, h, w, c = x.shape
    o, cw, kh, kw = weight.shape
    if cw != c:
        raise ConfigurationError(f"conv2d: input has {c} channels, kernel expects {cw}")
    if kh > h or kw > w:
        raise ConfigurationError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{w}")
    if stride < 1:
        raise ConfigurationError("conv2d: stride must be positive")
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    win = sliding_window_view(x.data, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * c)
    wmat = weight.data.transpose(2, 3, 1, 0).reshape(kh * kw * c, o)
    y = cols @ wmat
    if bias is not None:
        y += bias.data
    y = y.reshape(n, ho, wo, o)

    def bw(g):
        g2 = g.reshape(-1, o)
        gw = None
        if weight.requires_grad:
            gw = (cols.T @ g2).reshape(kh, kw, c, o).transpose(3, 2, 0, 1)
        gx = None
        if x.requires_grad:
            # col2im one kernel tap at a time; avoids materialising the full column gradient
            taps = wmat.reshape(kh, kw, c, o)
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    gx[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride, :] += (
                        g2 @ taps[i, j].T
                    ).reshape(n, ho, wo, c)
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    if not (_grad_enabled and any(p.requires_grad for p in parents)):
        return Tensor(y)
    return Tensor(y, True, parents, bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gain.data
            d = x.shape[-1]
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).sum(axis=-1, keepdims=True) / d)
        gg = _unbroadcast(g * xhat, gain.shape)
        gb = _unbroadcast(g, bias.shape)
        return gx, gg, gb

    return _node(y, (x, gain, bias), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted log-softmax."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    soft = np.exp(y)

    def bw(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _node(y, (x,), bw)


# --------------------------------------------------------------------------
# parameters and optimisation


class ParameterSet:
    """Ordered, named collection of learnable leaf tensors."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._entries:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=self.dtype)
        t = Tensor(arr, requires_grad=True)
        t.grad = np.zeros_like(arr)
        self._entries[name] = t
        return t

    def share(self, name: str, leaf: Tensor) -> None:
        """Register an existing leaf tensor (owned by another set) under ``name``."""
        if name in self._entries:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        self._entries[name] = leaf

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    @property
    def gradients(self) -> dict[str, np.ndarray]:
        return {k: t.grad for k, t in self._entries.items()}

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad[...] = 0.0

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._entries.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self._entries):
            raise ConfigurationError("parameter names differ")
        for k, t in self._entries.items():
            src = np.asarray(arrays[k])
            if src.shape != t.shape:
                raise ConfigurationError(f"shape mismatch for {k}: {src.shape} vs {t.shape}")
            t.data[...] = src

    def copy(self) -> "ParameterSet":
        out = ParameterSet(self.dtype)
        for k, t in self._entries.items():
            out.add(k, t.data.copy())
        return out

    def size(self) -> int:
        return sum(t.data.size for t in self._entries.values())


def init_dense(params: ParameterSet, name: str, in_features: int, out_features: int, rng) -> None:
    bound = np.sqrt(1.0 / in_features)
    params.add(f"{name}.weight", rng.uniform(-bound, bound, size=(out_features, in_features)))
    params.add(f"{name}.bias", np.zeros(out_features))


def init_conv(params: ParameterSet, name: str, in_channels: int, out_channels: int, kernel: int, rng) -> None:
    bound = np.sqrt(1.0 / (in_channels * kernel * kernel))
    params.add(f"{name}.weight", rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel, kernel)))
    params.add(f"{name}.bias", np.zeros(out_channels))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParameterSet, lr: float = 1e-3, **kw) -> "AdamState":
        st = cls(lr=lr, **kw)
        for k, t in params.items():
            st.m[k] = np.zeros_like(t.data)
            st.v[k] = np.zeros_like(t.data)
        return st


def adam_step(params: ParameterSet, state: AdamState) -> None:
    """Bias-corrected Adam update; clears gradients afterwards."""
    for k, t in params.items():
        if not np.all(np.isfinite(t.grad)):
            raise DivergenceError(f"non-finite gradient in parameter {k!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for k, t in params.items():
        g = t.grad
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        t.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(t.dtype, copy=False)
        g[...] = 0.0


def ema_blend(target: ParameterSet, source: ParameterSet, tau: float) -> ParameterSet:
    """In place: target <- tau * source + (1 - tau) * target."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigurationError(f"tau must lie in [0, 1], got {tau}")
    if target.names() != source.names():
        raise ConfigurationError("ema_blend: parameter names differ")
    for k, t in target.items():
        s = source[k].data
        if s.shape != t.shape:
            raise ConfigurationError(f"ema_blend: shape mismatch for {k}")
        t.data[...] = tau * s + (1.0 - tau) * t.data
    return target
