"""Per-frame feature grids, detection embeddings and the multimodal token layout."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Parameter, Tensor
from .layers import MLP, Linear, Module, sinusoidal_2d
from .structures import DetectionSet


class PatchSizeError(ValueError):
    pass


def patchify(frames: np.ndarray, grid: int) -> np.ndarray:
    """``(..., C, H0, W0)`` -> ``(..., grid, grid, C*p*p)`` non-overlapping patches."""
    *lead, c, h0, w0 = frames.shape
    if h0 % grid or w0 % grid or h0 // grid != w0 // grid:
        raise PatchSizeError(f"frame size {h0}x{w0} does not split into a {grid}x{grid} grid of square patches")
    p = h0 // grid
    x = frames.reshape(*lead, c, grid, p, grid, p)
    n = len(lead)
    axes = tuple(range(n)) + (n + 1, n + 3, n, n + 2, n + 4)
    return x.transpose(axes).reshape(*lead, grid, grid, c * p * p)


class FrameEmbedder(Module):
    """Backbone stand-in: strided patch convolution then a 1x1 projection.

    Both stages are linear; there is no cross-frame mixing.
    """

    def __init__(self, channels: int, patch: int, dim: int, rng: np.random.Generator):
        self.patch = patch
        self.patch_conv = Linear(channels * patch * patch, dim, rng)
        self.proj = Linear(dim, dim, rng)

    def forward(self, frames: np.ndarray) -> Tensor:
        frames = np.asarray(frames)
        h0 = frames.shape[-2]
        if h0 % self.patch:
            raise PatchSizeError(f"frame height {h0} not divisible by patch size {self.patch}")
        patches = patchify(frames, h0 // self.patch).astype(self.patch_conv.weight.dtype, copy=False)
        return self.proj(self.patch_conv(patches))


def detection_array(seq: Sequence[DetectionSet]) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``T`` padded sets into ``(T, Q, 5)`` vectors and a ``(T, Q)`` real mask."""
    sizes = {len(ds) for ds in seq}
    if len(sizes) != 1:
        raise DimensionError(f"detection sets are not padded to a common Q: sizes {sorted(sizes)}")
    return np.stack([ds.as_array() for ds in seq]), np.stack([ds.real_mask() for ds in seq])


class DetectionEmbedder(Module):
    """Shared two-layer MLP over ``(x1, y1, x2, y2, score)``; dummies are the zero vector.

    Coordinates are multiplied by ``scale`` (the grid size) first, so a move of
    one grid cell changes the input by one unit.
    """

    def __init__(self, dim: int, rng: np.random.Generator, scale: float = 1.0):
        self.mlp = MLP([5, dim, dim], rng)
        self.scale = scale

    def forward(self, det_vectors: np.ndarray) -> Tensor:
        vectors = np.array(det_vectors, dtype=self.mlp.last.weight.dtype)
        vectors[..., :4] *= self.scale
        return self.mlp(vectors)


class TokenAssembler(Module):
    """Concatenate ``H*W`` spatial tokens and ``Q`` detection tokens per frame.

    Spatial tokens get a fixed 2-D sinusoidal code, detection slots a learned
    per-slot embedding; both are the same for every frame.
    """

    def __init__(self, grid: int, slots: int, dim: int, rng: np.random.Generator):
        self.spatial_code = sinusoidal_2d(grid, grid, dim)
        self.slot_embedding = Parameter(rng.normal(0.0, 0.02, size=(slots, dim)))

    def positional(self) -> Tensor:
        return ad.concat([Tensor(self.spatial_code.astype(self.slot_embedding.dtype)), self.slot_embedding], axis=0)

    def forward(self, frame_grids: Tensor, det_tokens: Tensor, positional: bool = True) -> Tensor:
        *lead, h, w, d = frame_grids.shape
        if det_tokens.shape[-1] != d:
            raise DimensionError(f"frame features have D={d} but detection tokens have D={det_tokens.shape[-1]}")
        if tuple(det_tokens.shape[:-2]) != tuple(lead):
            raise DimensionError(f"frame grids {frame_grids.shape} and detection tokens {det_tokens.shape} disagree on T")
        spatial = frame_grids.reshape(*lead, h * w, d)
        tokens = ad.concat([spatial, det_tokens], axis=-2)
        return tokens + self.positional() if positional else tokens
