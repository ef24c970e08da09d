"""Transformer encoder over the multimodal tokens and the split of its memory."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .layers import EncoderBlock, Module


class MemoryShapeError(ValueError):
    pass


@dataclass
class EncoderMemory:
    Z: Tensor  # (..., T, H*W + Q, D)
    z_LT: Tensor  # (..., H*W + Q, D) last frame, all tokens
    video_memory: Tensor  # (..., T, H*W, D) spatial tokens only
    z_T_grid: Tensor  # (..., H, W, D) last frame spatial tokens


def split_memory(Z: Tensor, grid: int) -> EncoderMemory:
    """Views of ``Z``: global-context memory, video-only memory and last-frame grid."""
    if Z.ndim < 3:
        raise MemoryShapeError(f"memory must be (..., T, tokens, D), got shape {Z.shape}")
    hw = grid * grid
    if Z.shape[-2] < hw:
        raise MemoryShapeError(f"{Z.shape[-2]} tokens per frame cannot hold a {grid}x{grid} grid")
    z_lt = Z[..., -1, :, :]
    video = Z[..., :hw, :]
    lead = z_lt.shape[:-2]
    z_t_grid = z_lt[..., :hw, :].reshape(*lead, grid, grid, Z.shape[-1])
    return EncoderMemory(Z, z_lt, video, z_t_grid)


class Encoder(Module):
    """Stack of pre-norm blocks over all ``T*(H*W+Q)`` tokens jointly (or per frame)."""

    def __init__(self, dim: int, heads: int, hidden: int, layers: int, grid: int,
                 rng: np.random.Generator, attention: str = "joint"):
        if layers < 1:
            raise ValueError("encoder needs at least one layer")
        self.blocks = [EncoderBlock(dim, heads, hidden, rng) for _ in range(layers)]
        self.grid = grid
        self.attention = attention

    def forward(self, tokens: Tensor) -> EncoderMemory:
        *lead, t, n, d = tokens.shape
        x = tokens.reshape(*lead, t * n, d) if self.attention == "joint" else tokens
        for block in self.blocks:
            x = block(x)
        return split_memory(x.reshape(*lead, t, n, d), self.grid)
