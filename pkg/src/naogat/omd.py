"""Object motion dynamics: box tokens attended across frames and splatted onto the grid."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import MLP, EncoderBlock, Module, sinusoidal_1d


def splat_weights(boxes: np.ndarray, real: np.ndarray, grid: int) -> np.ndarray:
    """Bilinear splat matrix from box centres to grid cells.

    ``boxes`` is ``(..., Q, 4)`` xyxy in ``[0, 1]``; the result has shape
    ``(..., grid*grid, Q)``.  Cell ``(i, j)`` has its centre at
    ``((j + 0.5)/grid, (i + 0.5)/grid)``.  Corners falling outside the grid are
    dropped, so a centre near the border spreads over fewer cells.
    """
    cx = (boxes[..., 0] + boxes[..., 2]) / 2 * grid - 0.5
    cy = (boxes[..., 1] + boxes[..., 3]) / 2 * grid - 0.5
    x0, y0 = np.floor(cx), np.floor(cy)
    fx, fy = cx - x0, cy - y0
    out = np.zeros(boxes.shape[:-2] + (grid * grid, boxes.shape[-2]))
    q_index = np.broadcast_to(np.arange(boxes.shape[-2]), real.shape)
    lead_index = np.indices(real.shape)[:-1]
    for dy, dx, w in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                      (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        xi = (x0 + dx).astype(int)
        yi = (y0 + dy).astype(int)
        ok = real & (xi >= 0) & (xi < grid) & (yi >= 0) & (yi < grid) & (w > 0)
        cell = np.where(ok, yi * grid + xi, 0)
        np.add.at(out, (*[ix[ok] for ix in lead_index], cell[ok], q_index[ok]), w[ok])
    return out


class ObjectMotion(Module):
    def __init__(self, dim: int, heads: int, hidden: int, grid: int, rng: np.random.Generator):
        self.grid = grid
        self.expand = MLP([4, dim, dim], rng)
        self.block = EncoderBlock(dim, heads, hidden, rng)

    def expand_boxes(self, boxes: np.ndarray, real: np.ndarray) -> Tensor:
        """``(..., T, Q, 4)`` boxes to ``(..., T, Q, D)`` tokens; dummy slots are zero.

        Boxes enter as centre and size in grid-cell units.  Raw ``[0, 1]``
        coordinates leave per-frame displacements too small for the attention
        to pick up the actor's speed.
        """
        boxes = np.asarray(boxes, dtype=np.float64)
        centre = (boxes[..., :2] + boxes[..., 2:]) / 2
        size = boxes[..., 2:] - boxes[..., :2]
        geometry = np.concatenate([centre, size], axis=-1) * self.grid
        tokens = self.expand(geometry.astype(self.expand.last.weight.dtype))
        return tokens * real[..., None].astype(tokens.dtype)

    def attend(self, box_tokens: Tensor, real: np.ndarray) -> Tensor:
        *lead, t, q, d = box_tokens.shape
        code = np.repeat(sinusoidal_1d(t, d), q, axis=0).astype(box_tokens.dtype)
        x = box_tokens.reshape(*lead, t * q, d) + code
        keys = real.reshape(*lead, 1, t * q)
        # every slot may see itself, so a clip without detections never errors
        mask = keys | np.eye(t * q, dtype=bool)
        out = self.block(x, mask).reshape(*lead, t, q, d)
        return out * real[..., None].astype(out.dtype)

    def sample_to_grid(self, attended: Tensor, boxes: np.ndarray, real: np.ndarray) -> Tensor:
        *lead, t, q, d = attended.shape
        weights = splat_weights(boxes, real, self.grid).astype(attended.dtype)
        grid = ad.matmul(weights, attended)
        return grid.reshape(*lead, t, self.grid, self.grid, d)

    def forward(self, boxes: np.ndarray, real: np.ndarray) -> Tensor:
        tokens = self.expand_boxes(boxes, real)
        return self.sample_to_grid(self.attend(tokens, real), boxes, real)
