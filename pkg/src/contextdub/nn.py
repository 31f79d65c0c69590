"""Differentiable building blocks shared by every model component.

All sequence blocks operate on time-major matrices of shape
``(time_steps, hidden_dim)``. Trainable state lives in ``Parameter``
objects registered on ``Module``; normalization statistics live in named
buffers so they travel with checkpoints. One training step mutates
parameters from a single thread; evaluation with frozen parameters may
run in parallel across samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SequenceTooShortError, ShapeError, UnknownSymbolError
from .tensor import (Tensor, affine, concat, conv_unfold, gather_rows,
                     layer_norm, mha_core, pool_pairs, softmax)


def check_feature_sequence(x, hidden_dim=None, name="sequence"):
    """Validate the (time_steps, hidden_dim) contract and return the array."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if data.ndim != 2:
        raise ShapeError("rank", 2, data.ndim, name)
    if data.shape[0] < 1:
        raise ShapeError("time_steps", ">= 1", data.shape[0], name)
    if data.shape[1] < 1:
        raise ShapeError("hidden_dim", ">= 1", data.shape[1], name)
    if hidden_dim is not None and data.shape[1] != hidden_dim:
        raise ShapeError("hidden_dim", hidden_dim, data.shape[1], name)
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{name} contains non-finite entries")
    return data


class Parameter(Tensor):
    """A trainable tensor."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Base class with parameter/buffer registration and train/eval modes."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = np.asarray(array, dtype=np.float64)
        object.__setattr__(self, name, self._buffers[name])

    def set_buffer(self, name, array):
        value = np.asarray(array, dtype=np.float64)
        if self._buffers[name].shape != value.shape:
            raise ShapeError(name, self._buffers[name].shape, value.shape, "buffer")
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix=""):
        for name in self._buffers:
            yield prefix + name, self._buffers[name]
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def modules(self):
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def get_submodule(self, path):
        module = self
        for part in path.split(".") if path else []:
            module = module._modules[part]
        return module

    def train(self, flag=True):
        for m in self.modules():
            object.__setattr__(m, "training", flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, items=()):
        super().__init__()
        self._items = []
        for item in items:
            self.append(item)

    def append(self, module):
        self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def _xavier(rng, fan_in, fan_out, shape):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def sinusoidal_positions(steps, dim):
    """Fixed sine/cosine position table, one row per step."""
    positions = np.arange(steps)[:, None]
    rates = np.exp(-np.log(10000.0) * (2 * (np.arange(dim) // 2)) / dim)
    angles = positions * rates[None, :]
    table = np.empty((steps, dim))
    table[:, 0::2] = np.sin(angles[:, 0::2])
    table[:, 1::2] = np.cos(angles[:, 1::2])
    return table


def add_positions(x):
    """Add the fixed position table to a (steps, dim) sequence."""
    return x + Tensor(sinusoidal_positions(x.shape[0], x.shape[1]))


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Parameter(_xavier(rng, in_dim, out_dim, (in_dim, out_dim)))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise ShapeError("hidden_dim", self.in_dim, x.shape[-1], "Linear input")
        return affine(x, self.weight, self.bias)


class Conv1d(Module):
    """Length-preserving 1-D convolution over the time axis of (T, C) input.

    Odd kernels get symmetric zero padding; kernel 1 is a pointwise map.
    """

    def __init__(self, in_dim, out_dim, kernel_size, rng, bias=True):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd for symmetric padding")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.kernel_size = kernel_size
        fan_in = in_dim * kernel_size
        self.weight = Parameter(_xavier(rng, fan_in, out_dim, (fan_in, out_dim)))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise ShapeError("hidden_dim", self.in_dim, x.shape[-1], "Conv1d input")
        cols = x if self.kernel_size == 1 else conv_unfold(x, self.kernel_size)
        return affine(cols, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, vocab_size, dim, rng):
        super().__init__()
        self.vocab_size = vocab_size
        self.weight = Parameter(rng.normal(0.0, dim ** -0.5, size=(vocab_size, dim)))

    def forward(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        bad = (ids < 0) | (ids >= self.vocab_size)
        if np.any(bad):
            raise UnknownSymbolError(int(ids[bad][0]), self.vocab_size)
        return gather_rows(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def forward(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)


class BatchNorm1d(Module):
    """Per-channel normalization over the time axis of a (T, C) sequence.

    Training mode normalizes with batch statistics and updates running
    buffers (momentum 0.1, unbiased variance); evaluation mode uses the
    running buffers only, so repeated eval passes are bit-identical.
    """

    def __init__(self, dim, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.register_buffer("running_mean", np.zeros(dim))
        self.register_buffer("running_var", np.ones(dim))

    def forward(self, x):
        if self.training:
            steps = x.shape[0]
            mu = x.data.mean(axis=0)
            var = x.data.var(axis=0)
            unbiased = var * (steps / (steps - 1)) if steps > 1 else var
            m = self.momentum
            self.set_buffer("running_mean", (1 - m) * self.running_mean + m * mu)
            self.set_buffer("running_var", (1 - m) * self.running_var + m * unbiased)
            return layer_norm(x, self.gamma, self.beta, self.eps, axis=0)
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        gamma, beta = self.gamma, self.beta
        shift = self.running_mean

        def back(g):
            Tensor._accum(beta, g.sum(axis=0))
            Tensor._accum(gamma, (g * (x.data - shift) * inv).sum(axis=0))
            Tensor._accum(x, g * (gamma.data * inv))

        return Tensor._node((x.data - shift) * inv * gamma.data + beta.data,
                            (x, gamma, beta), back)


class Dropout(Module):
    """Inverted dropout driven by an explicit generator for reproducibility."""

    def __init__(self, p, rng):
        super().__init__()
        self.p = p
        self.rng = rng

    def forward(self, x):
        if not self.training or self.p <= 0.0:
            return x
        if self.rng is None:
            raise ValueError("dropout with p > 0 requires a random generator")
        keep = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * Tensor(keep)


def avg_pool_halve(x):
    """Average pooling with kernel 2, stride 2; output length floor(T/2)."""
    if x.shape[0] < 2:
        raise ShapeError("time_steps", ">= 2", x.shape[0], "avg_pool_halve")
    return pool_pairs(x)


@dataclass
class AttentionOutput:
    """Attention values plus the (heads, query_steps, key_steps) weights."""

    values: Tensor
    weights: Tensor


class MultiHeadAttention(Module):
    """Scaled dot-product attention with learned input/output projections."""

    def __init__(self, dim, heads, rng):
        super().__init__()
        if dim % heads != 0:
            raise ShapeError("hidden_dim", f"divisible by {heads} heads", dim, "attention")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.proj_q = Linear(dim, dim, rng)
        self.proj_k = Linear(dim, dim, rng)
        self.proj_v = Linear(dim, dim, rng)
        self.proj_out = Linear(dim, dim, rng)

    def forward(self, query, key, value):
        for name, t in (("query", query), ("key", key), ("value", value)):
            if t.shape[-1] != self.dim:
                raise ShapeError("hidden_dim", self.dim, t.shape[-1], f"attention {name}")
        if key.shape[0] != value.shape[0]:
            raise ShapeError("key/value time_steps", key.shape[0], value.shape[0], "attention")
        context, weights = mha_core(self.proj_q(query), self.proj_k(key),
                                    self.proj_v(value), self.heads)
        return AttentionOutput(values=self.proj_out(context), weights=weights)


class FFTBlock(Module):
    """Self-attention plus a position-wise convolutional feed-forward,
    each wrapped in residual + layer normalization.

    Defaults (2 heads, kernel sizes 9/1, inner dim 4x) follow the usual
    feed-forward-transformer convention for non-autoregressive synthesis.
    """

    def __init__(self, dim, rng, heads=2, inner_dim=None, kernels=(9, 1),
                 dropout=0.1, dropout_rng=None):
        super().__init__()
        inner_dim = inner_dim or 4 * dim
        self.attention = MultiHeadAttention(dim, heads, rng)
        self.norm_attn = LayerNorm(dim)
        self.conv_in = Conv1d(dim, inner_dim, kernels[0], rng)
        self.conv_out = Conv1d(inner_dim, dim, kernels[1], rng)
        self.norm_ff = LayerNorm(dim)
        self.dropout = Dropout(dropout, dropout_rng)

    def forward(self, x):
        check_feature_sequence(x, name="fft_block input")
        attended = self.attention(x, x, x).values
        x = self.norm_attn(x + self.dropout(attended))
        ff = self.conv_out(self.conv_in(x).relu())
        return self.norm_ff(x + self.dropout(ff))


class ConvDownsampleStack(Module):
    """Repeated [conv k3 -> ReLU -> batch norm -> dropout -> avg pool 2].

    Every layer preserves length through symmetric conv padding, so the
    pooling alone halves the sequence: output length is floor(T / 2)
    applied ``num_layers`` times. Inputs shorter than 2**num_layers are
    rejected rather than padded.
    """

    def __init__(self, num_layers, in_dim, rng, filters=256, kernel_size=3,
                 dropout=0.1, dropout_rng=None):
        super().__init__()
        self.num_layers = num_layers
        self.in_dim = in_dim
        self.filters = filters
        self.convs = ModuleList(
            Conv1d(in_dim if i == 0 else filters, filters, kernel_size, rng)
            for i in range(num_layers)
        )
        self.norms = ModuleList(BatchNorm1d(filters) for _ in range(num_layers))
        self.dropout = Dropout(dropout, dropout_rng)

    def output_length(self, time_steps):
        for _ in range(self.num_layers):
            time_steps //= 2
        return time_steps

    def forward(self, x):
        check_feature_sequence(x, hidden_dim=self.in_dim, name="downsample input")
        if x.shape[0] < 2 ** self.num_layers:
            raise SequenceTooShortError(x.shape[0], 2 ** self.num_layers, self.num_layers)
        for conv, norm in zip(self.convs, self.norms):
            x = self.dropout(norm(conv(x).relu()))
            x = avg_pool_halve(x)
        return x
