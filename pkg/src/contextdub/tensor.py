"""Reverse-mode automatic differentiation over float64 numpy arrays.

Deliberately small: only the operations the model blocks need. Every op
records a backward closure; ``Tensor.backward()`` runs them in reverse
topological order. Gradients are plain numpy arrays accumulated on
``Tensor.grad``. Backward closures never mutate the arrays they receive,
so grads may be shared between nodes without copying.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph machinery -----------------------------------------------------

    @staticmethod
    def _node(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @staticmethod
    def _accum(t, g):
        if t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo = []
        seen = set()
        stack = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------------

    @staticmethod
    def _coerce(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def back(g):
            Tensor._accum(a, _unbroadcast(g, a.data.shape))
            Tensor._accum(b, _unbroadcast(g, b.data.shape))

        return Tensor._node(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._node(-a.data, (a,), lambda g: Tensor._accum(a, -g))

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def back(g):
            Tensor._accum(a, _unbroadcast(g * b.data, a.data.shape))
            Tensor._accum(b, _unbroadcast(g * a.data, b.data.shape))

        return Tensor._node(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other
        inv = 1.0 / b.data

        def back(g):
            Tensor._accum(a, _unbroadcast(g * inv, a.data.shape))
            Tensor._accum(b, _unbroadcast(-g * a.data * inv * inv, b.data.shape))

        return Tensor._node(a.data * inv, (a, b), back)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        a = self
        out = a.data ** exponent

        def back(g):
            Tensor._accum(a, g * exponent * a.data ** (exponent - 1))

        return Tensor._node(out, (a,), back)

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def back(g):
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
            Tensor._accum(a, _unbroadcast(ga, a.data.shape))
            Tensor._accum(b, _unbroadcast(gb, b.data.shape))

        return Tensor._node(a.data @ b.data, (a, b), back)

    # -- elementwise functions -------------------------------------------------

    def exp(self):
        a = self
        out = np.exp(a.data)
        return Tensor._node(out, (a,), lambda g: Tensor._accum(a, g * out))

    def log(self):
        a = self
        return Tensor._node(np.log(a.data), (a,), lambda g: Tensor._accum(a, g / a.data))

    def sqrt(self):
        a = self
        out = np.sqrt(a.data)
        return Tensor._node(out, (a,), lambda g: Tensor._accum(a, g * 0.5 / out))

    def tanh(self):
        a = self
        out = np.tanh(a.data)
        return Tensor._node(out, (a,), lambda g: Tensor._accum(a, g * (1.0 - out * out)))

    def sigmoid(self):
        a = self
        out = np.empty_like(a.data)
        pos = a.data >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
        ex = np.exp(a.data[~pos])
        out[~pos] = ex / (1.0 + ex)
        return Tensor._node(out, (a,), lambda g: Tensor._accum(a, g * out * (1.0 - out)))

    def relu(self):
        a = self
        mask = a.data > 0
        return Tensor._node(a.data * mask, (a,), lambda g: Tensor._accum(a, g * mask))

    def leaky_relu(self, slope=0.2):
        a = self
        factor = np.where(a.data > 0, 1.0, slope)
        return Tensor._node(a.data * factor, (a,), lambda g: Tensor._accum(a, g * factor))

    def gelu(self):
        """Exact GELU, x * Phi(x), with the erf form."""
        a = self
        cdf = 0.5 * (1.0 + erf(a.data / _SQRT2))
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)

        def back(g):
            Tensor._accum(a, g * (cdf + a.data * pdf))

        return Tensor._node(a.data * cdf, (a,), back)

    def abs(self):
        a = self
        sign = np.sign(a.data)
        return Tensor._node(np.abs(a.data), (a,), lambda g: Tensor._accum(a, g * sign))

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is None:
                Tensor._accum(a, np.broadcast_to(g, a.data.shape))
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                Tensor._accum(a, np.broadcast_to(ge, a.data.shape))

        return Tensor._node(out, (a,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape manipulation ------------------------------------------------------

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        old = a.data.shape
        return Tensor._node(
            a.data.reshape(shape), (a,), lambda g: Tensor._accum(a, g.reshape(old))
        )

    def transpose(self, *axes):
        a = self
        if len(axes) == 1 and isinstance(axes[0], tuple):
            axes = axes[0]
        inverse = tuple(np.argsort(axes))
        return Tensor._node(
            a.data.transpose(axes), (a,), lambda g: Tensor._accum(a, g.transpose(inverse))
        )

    def __getitem__(self, key):
        a = self
        out = a.data[key]
        advanced = isinstance(key, np.ndarray) or (
            isinstance(key, tuple) and any(isinstance(k, np.ndarray) for k in key)
        )

        def back(g):
            full = np.zeros_like(a.data)
            if advanced:
                np.add.at(full, key, g)
            else:
                full[key] = g
            Tensor._accum(a, full)

        return Tensor._node(out, (a,), back)


# -- free functions --------------------------------------------------------------


def concat(tensors, axis=0):
    tensors = [Tensor._coerce(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            Tensor._accum(t, g[tuple(idx)])

    return Tensor._node(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def pad_rows(x, before, after):
    """Zero-pad along axis 0."""
    a = Tensor._coerce(x)
    n = a.data.shape[0]
    width = [(before, after)] + [(0, 0)] * (a.data.ndim - 1)

    def back(g):
        Tensor._accum(a, g[before:before + n])

    return Tensor._node(np.pad(a.data, width), (a,), back)


def gather_rows(x, index):
    """Select rows ``x[index]`` for an integer array ``index``."""
    a = Tensor._coerce(x)
    index = np.asarray(index)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        Tensor._accum(a, full)

    return Tensor._node(a.data[index], (a,), back)


def repeat_rows(x, counts):
    """Repeat row i of ``x`` counts[i] times (used by length regulation)."""
    a = Tensor._coerce(x)
    counts = np.asarray(counts, dtype=np.int64)
    if a.data.shape[0] != counts.shape[0]:
        raise ValueError("one repeat count per row is required")
    index = np.repeat(np.arange(a.data.shape[0]), counts)
    return gather_rows(a, index)


def segment_sum(x, segment_starts):
    """Sum contiguous row segments; segment s covers rows starts[s]:starts[s+1].

    Rows must already be grouped by segment. Summation follows row order,
    so the result is reproducible bit for bit for a fixed row order.
    """
    a = Tensor._coerce(x)
    starts = np.asarray(segment_starts, dtype=np.int64)
    n = a.data.shape[0]
    lengths = np.diff(np.append(starts, n))
    out = np.add.reduceat(a.data, starts, axis=0)
    if np.any(lengths == 0):
        out[lengths == 0] = 0.0  # reduceat puts the next row in empty segments

    def back(g):
        Tensor._accum(a, np.repeat(g, lengths, axis=0))

    return Tensor._node(out, (a,), back)


def softmax(x, axis=-1):
    """Softmax along ``axis`` as a single fused node."""
    t = Tensor._coerce(x)
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        Tensor._accum(t, (g - inner) * out)

    return Tensor._node(out, (t,), back)


def affine(x, weight, bias=None):
    """Fused ``x @ weight + bias`` for 2-D ``x``."""
    xw = x.data @ weight.data
    out = xw if bias is None else xw + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        if x.requires_grad:
            Tensor._accum(x, g @ weight.data.T)
        if weight.requires_grad:
            Tensor._accum(weight, x.data.T @ g)
        if bias is not None and bias.requires_grad:
            Tensor._accum(bias, g.sum(axis=0))

    return Tensor._node(out, parents, back)


def layer_norm(x, gamma, beta, eps, axis=-1):
    """Fused normalization over ``axis`` with per-channel affine parameters.

    ``axis=-1`` is layer normalization of rows; ``axis=0`` normalizes each
    channel over time (training-mode batch normalization).
    """
    mu = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv
    out = normed * gamma.data + beta.data

    def back(g):
        Tensor._accum(beta, g.sum(axis=0))
        Tensor._accum(gamma, (g * normed).sum(axis=0))
        gh = g * gamma.data
        mean_gh = gh.mean(axis=axis, keepdims=True)
        mean_ghn = (gh * normed).mean(axis=axis, keepdims=True)
        Tensor._accum(x, (gh - mean_gh - normed * mean_ghn) * inv)

    return Tensor._node(out, (x, gamma, beta), back)


def conv_unfold(x, kernel_size):
    """Stack ``kernel_size`` zero-padded shifts of (T, C) rows into (T, k*C)."""
    steps, channels = x.data.shape
    half = kernel_size // 2
    padded = np.zeros((steps + 2 * half, channels))
    padded[half:half + steps] = x.data
    cols = np.empty((steps, kernel_size * channels))
    for i in range(kernel_size):
        cols[:, i * channels:(i + 1) * channels] = padded[i:i + steps]

    def back(g):
        full = np.zeros_like(padded)
        for i in range(kernel_size):
            full[i:i + steps] += g[:, i * channels:(i + 1) * channels]
        Tensor._accum(x, full[half:half + steps])

    return Tensor._node(cols, (x,), back)


def broadcast_rows(vec, rows):
    """Tile a (d,) vector into a (rows, d) matrix."""
    out = np.tile(vec.data, (rows, 1))
    return Tensor._node(out, (vec,), lambda g: Tensor._accum(vec, g.sum(axis=0)))


def mha_core(q, k, v, heads):
    """Fused scaled dot-product attention over ``heads`` heads.

    Inputs are already-projected (steps, dim) matrices. Returns the
    (query_steps, dim) context and the softmax weights as a constant
    (heads, query_steps, key_steps) tensor.
    """
    q_steps, dim = q.data.shape
    k_steps = k.data.shape[0]
    head_dim = dim // heads
    scale = 1.0 / np.sqrt(head_dim)
    qh = q.data.reshape(q_steps, heads, head_dim).transpose(1, 0, 2)
    kh = k.data.reshape(k_steps, heads, head_dim).transpose(1, 0, 2)
    vh = v.data.reshape(k_steps, heads, head_dim).transpose(1, 0, 2)
    scores = (qh @ kh.transpose(0, 2, 1)) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    weights = e / e.sum(axis=-1, keepdims=True)  # (heads, q_steps, k_steps)
    context = (weights @ vh).transpose(1, 0, 2).reshape(q_steps, dim)

    def back(g):
        g_ctx = g.reshape(q_steps, heads, head_dim).transpose(1, 0, 2)
        g_v = weights.transpose(0, 2, 1) @ g_ctx
        g_w = g_ctx @ vh.transpose(0, 2, 1)
        g_s = (g_w - (g_w * weights).sum(axis=-1, keepdims=True)) * weights * scale
        g_q = g_s @ kh
        g_k = g_s.transpose(0, 2, 1) @ qh
        Tensor._accum(q, g_q.transpose(1, 0, 2).reshape(q_steps, dim))
        Tensor._accum(k, g_k.transpose(1, 0, 2).reshape(k_steps, dim))
        Tensor._accum(v, g_v.transpose(1, 0, 2).reshape(k_steps, dim))

    return Tensor._node(context, (q, k, v), back), Tensor(weights)


def pool_pairs(x):
    """Average adjacent row pairs; drops a trailing odd row."""
    half = x.data.shape[0] // 2
    trimmed = x.data[:2 * half]
    out = 0.5 * (trimmed[0::2] + trimmed[1::2])

    def back(g):
        full = np.zeros_like(x.data)
        full[0:2 * half:2] = 0.5 * g
        full[1:2 * half:2] = 0.5 * g
        Tensor._accum(x, full)

    return Tensor._node(out, (x,), back)
