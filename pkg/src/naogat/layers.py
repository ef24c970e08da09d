"""Parameter containers and transformer building blocks."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Parameter, Tensor


class Module:
    """Base class: parameters are discovered from instance attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(uniform_init(rng, in_dim, (in_dim, out_dim)))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def forward(self, x) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """Stack of linear layers with GELU between them (none after the last)."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.gelu(x)
        return x

    @property
    def last(self) -> Linear:
        return self.layers[-1]


class MultiHeadAttention(Module):
    """Scaled dot-product attention with ``heads`` heads over the last two axes.

    ``mask`` is boolean, True where a query may attend to a key, and must
    broadcast to ``(..., Lq, Lk)``.  The weights of the most recent call are
    kept in ``last_weights`` with shape ``(..., heads, Lq, Lk)``.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise DimensionError(f"model dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        *lead, length, dim = x.shape
        x = x.reshape(*lead, length, self.heads, dim // self.heads)
        return ad.swapaxes(x, -2, -3)

    def forward(self, q, k, v, mask: np.ndarray | None = None) -> Tensor:
        q, k, v = ad.as_tensor(q), ad.as_tensor(k), ad.as_tensor(v)
        if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
            raise DimensionError(f"attention shapes q{q.shape} k{k.shape} v{v.shape}")
        qh = self._split(self.q_proj(q))
        kh = self._split(self.k_proj(k))
        vh = self._split(self.v_proj(v))
        if mask is not None:
            mask = np.expand_dims(np.asarray(mask, dtype=bool), -3)
        weights = ad.attention_weights(qh, kh, mask)
        self.last_weights = weights.data
        out = ad.swapaxes(weights @ vh, -2, -3)
        out = out.reshape(*q.shape[:-1], q.shape[-1])
        return self.out_proj(out)


def multi_head_attention(attn: MultiHeadAttention, q, k, v, mask=None) -> Tensor:
    return attn(q, k, v, mask)


class EncoderBlock(Module):
    """Pre-norm self-attention block: ``x + attn(LN x)`` then ``x + mlp(LN x)``."""

    def __init__(self, dim: int, heads: int, hidden: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP([dim, hidden, dim], rng)

    def forward(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, mask)
        return x + self.mlp(self.norm2(x))


class DecoderBlock(Module):
    """Pre-norm decoder block: self-attention, cross-attention to memory, MLP."""

    def __init__(self, dim: int, heads: int, hidden: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, rng)
        self.norm3 = LayerNorm(dim)
        self.mlp = MLP([dim, hidden, dim], rng)

    def forward(self, x: Tensor, memory: Tensor, memory_mask: np.ndarray | None = None) -> Tensor:
        h = self.norm1(x)
        x = x + self.self_attn(h, h, h)
        x = x + self.cross_attn(self.norm2(x), memory, memory, memory_mask)
        return x + self.mlp(self.norm3(x))


def residual_output_layers(module: Module) -> list[Linear]:
    """Linear layers whose outputs feed a residual sum (attention out-proj, MLP tail)."""
    found: list[Linear] = []

    def visit(m):
        if isinstance(m, MultiHeadAttention):
            found.append(m.out_proj)
            return
        if isinstance(m, (EncoderBlock, DecoderBlock)):
            for value in vars(m).values():
                if isinstance(value, MLP):
                    found.append(value.last)
                elif isinstance(value, MultiHeadAttention):
                    found.append(value.out_proj)
            return
        for value in vars(m).values():
            if isinstance(value, Module):
                visit(value)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        visit(item)

    visit(module)
    return found


def sinusoidal_1d(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim // 2)[None, :]
    angle = pos / (10000.0 ** (2 * i / dim))
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)[:, : dim - dim // 2]
    return pe.astype(ad.DEFAULT_DTYPE)


def sinusoidal_2d(height: int, width: int, dim: int) -> np.ndarray:
    """Row-major ``(height*width, dim)`` encoding: half the channels per axis."""
    half = dim // 2
    ey = sinusoidal_1d(height, half)
    ex = sinusoidal_1d(width, dim - half)
    grid = np.concatenate(
        [np.repeat(ey[:, None, :], width, axis=1), np.repeat(ex[None, :, :], height, axis=0)], axis=-1
    )
    return grid.reshape(height * width, dim)
