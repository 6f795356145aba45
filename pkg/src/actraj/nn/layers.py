"""Parameterised layers built on the tensor primitives."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class Parameter(Tensor):
    """A named leaf tensor with Adam moment slots."""

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Module:
    """Container that discovers parameters and submodules from its attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = Parameter(glorot(rng, n_in, n_out, dtype))
        self.bias = Parameter(np.zeros(n_out, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"linear expects width {self.weight.shape[0]}, got {x.shape[-1]}")
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5, dtype=np.float32):
        self.gain = Parameter(np.ones(width, dtype=dtype))
        self.bias = Parameter(np.zeros(width, dtype=dtype))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(Module):
    def __init__(self, n: int, width: int, rng: np.random.Generator, dtype=np.float32):
        self.table = Parameter((rng.standard_normal((n, width)) * 0.02).astype(dtype))

    def forward(self, index) -> Tensor:
        return T.embedding_lookup(self.table, index)


class MLP(Module):
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, widths: list[int], rng: np.random.Generator, dtype=np.float32):
        self.layers = [Linear(a, b, rng, dtype) for a, b in zip(widths, widths[1:])]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x


class MultiHeadSelfAttention(Module):
    """Bidirectional scaled dot-product attention over the time axis (no mask)."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if d_model % heads:
            raise ShapeError(f"d_model {d_model} is not divisible by {heads} heads")
        self.heads = heads
        self.d_head = d_model // heads
        self.q = Linear(d_model, d_model, rng, dtype)
        self.k = Linear(d_model, d_model, rng, dtype)
        self.v = Linear(d_model, d_model, rng, dtype)
        self.out = Linear(d_model, d_model, rng, dtype)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.reshape(b, t, self.heads, self.d_head).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        b, t, d = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.d_head))
        weights = T.softmax(scores, axis=-1)
        self.last_weights = weights.data
        ctx = T.matmul(weights, v).transpose(0, 2, 1, 3).reshape(b, t, d)
        y = self.out(ctx)
        return y.reshape(t, d) if squeeze else y


def multi_head_self_attention(x: Tensor, heads: int, params: MultiHeadSelfAttention) -> Tensor:
    if x.shape[-1] % heads:
        raise ShapeError(f"width {x.shape[-1]} is not divisible by {heads} heads")
    if heads != params.heads:
        raise ShapeError(f"parameters were built for {params.heads} heads, not {heads}")
    return params(x)


class TransformerEncoderLayer(Module):
    """Post-norm block: x = LN(x + MHSA(x)); x = LN(x + FF(x))."""

    def __init__(self, d_model: int, heads: int, d_ff: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.attn = MultiHeadSelfAttention(d_model, heads, rng, dtype)
        self.norm1 = LayerNorm(d_model, dtype=dtype)
        self.ff = MLP([d_model, d_ff, d_model], rng, dtype)
        self.norm2 = LayerNorm(d_model, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.attn(x))
        return self.norm2(x + self.ff(x))


def sinusoidal_positional_encoding(length: int, width: int, dtype=np.float64) -> np.ndarray:
    if width % 2:
        raise ShapeError(f"positional encoding width must be even, got {width}")
    pos = np.arange(length)[:, None]
    freq = np.exp(-math.log(10000.0) * np.arange(0, width, 2) / width)
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table.astype(dtype)
