"""Next-active-object block: detection-seeded queries, decoder and prediction heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .boxes import xyxy_to_cxcywh
from .layers import MLP, DecoderBlock, Linear, Module


@dataclass
class ObjectQuerySet:
    queries: Tensor  # (..., N_q, D)
    is_roi: np.ndarray  # (..., N_q) bool, roi slots first
    source_box: np.ndarray  # (..., N_q, 4) xyxy, zeros for learnable slots


@dataclass
class NAOPredictionSet:
    z_nao: Tensor  # (..., N_q, D)
    boxes: Tensor  # (..., N_q, 4) cxcywh in (0, 1)
    class_logits: Tensor  # (..., N_q, C_n + 1), last index = no object

    def boxes_xyxy(self) -> np.ndarray:
        b = self.boxes.data.astype(np.float64)
        return np.concatenate([b[..., :2] - b[..., 2:] / 2, b[..., :2] + b[..., 2:] / 2], axis=-1)


def roi_pool_weights(boxes: np.ndarray, real: np.ndarray, grid: int, num_queries: int):
    """Mean-pooling weights over grid cells intersecting each real box.

    ``boxes`` is ``(..., Q, 4)`` xyxy and ``real`` the ``(..., Q)`` mask of a
    padded set (real entries first).  Returns ``(weights, is_roi, source)``
    with ``weights`` of shape ``(..., N_q, grid*grid)``.  A box of zero area
    falls back to the single cell holding its centre.
    """
    lead = boxes.shape[:-2]
    flat_boxes = boxes.reshape(-1, boxes.shape[-2], 4)
    flat_real = real.reshape(-1, real.shape[-1])
    n = flat_boxes.shape[0]
    weights = np.zeros((n, num_queries, grid * grid))
    is_roi = np.zeros((n, num_queries), dtype=bool)
    source = np.zeros((n, num_queries, 4))
    edges = np.arange(grid + 1) / grid
    for b in range(n):
        slots = np.flatnonzero(flat_real[b])[:num_queries]
        for k, j in enumerate(slots):
            x1, y1, x2, y2 = flat_boxes[b, j]
            cols = (edges[1:] > x1) & (edges[:-1] < x2)
            rows = (edges[1:] > y1) & (edges[:-1] < y2)
            cells = np.outer(rows, cols).reshape(-1)
            if not cells.any():
                cy = min(int((y1 + y2) / 2 * grid), grid - 1)
                cx = min(int((x1 + x2) / 2 * grid), grid - 1)
                cells[max(cy, 0) * grid + max(cx, 0)] = True
            weights[b, k] = cells / cells.sum()
            is_roi[b, k] = True
            source[b, k] = flat_boxes[b, j]
    return (weights.reshape(*lead, num_queries, grid * grid), is_roi.reshape(*lead, num_queries),
            source.reshape(*lead, num_queries, 4))


class ObjectQueryBuilder(Module):
    """Queries from ROI-pooled last-frame features, learnable tokens for the rest."""

    def __init__(self, dim: int, num_queries: int, grid: int, rng: np.random.Generator):
        self.num_queries = num_queries
        self.grid = grid
        self.roi_proj = Linear(dim, dim, rng)
        self.query_tokens = Parameter(rng.normal(0.0, 0.02, size=(num_queries, dim)))

    def forward(self, z_t_grid: Tensor, last_boxes: np.ndarray, last_real: np.ndarray) -> ObjectQuerySet:
        *lead, h, w, d = z_t_grid.shape
        weights, is_roi, source = roi_pool_weights(last_boxes, last_real, self.grid, self.num_queries)
        pooled = ad.matmul(weights.astype(z_t_grid.dtype), z_t_grid.reshape(*lead, h * w, d))
        roi = self.roi_proj(pooled)
        queries = ad.where(is_roi[..., None], roi, self.query_tokens)
        return ObjectQuerySet(queries, is_roi, source)


class NAODecoder(Module):
    """Decoder blocks: self-attention over queries, cross-attention to last-frame memory."""

    def __init__(self, dim: int, heads: int, hidden: int, layers: int, rng: np.random.Generator):
        self.blocks = [DecoderBlock(dim, heads, hidden, rng) for _ in range(layers)]

    def forward(self, queries: Tensor, memory: Tensor) -> Tensor:
        x = queries
        for block in self.blocks:
            x = block(x, memory)
        return x


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-3, 1 - 1e-3)
    return np.log(p / (1 - p))


class NAOHead(Module):
    """Box MLP (3 layers, sigmoid-squashed cxcywh) and a class head with a no-object slot.

    When reference boxes are supplied, the box MLP predicts an offset in
    logit space from the reference; learnable slots use a zero reference.
    """

    def __init__(self, dim: int, num_nouns: int, rng: np.random.Generator):
        self.box_mlp = MLP([dim, dim, dim, 4], rng)
        self.class_head = Linear(dim, num_nouns + 1, rng)

    def forward(self, z_nao: Tensor, reference: np.ndarray | None = None,
                ref_mask: np.ndarray | None = None) -> NAOPredictionSet:
        raw = self.box_mlp(z_nao)
        if reference is not None:
            offset = _logit(xyxy_to_cxcywh(reference))
            if ref_mask is not None:
                offset = np.where(ref_mask[..., None], offset, 0.0)
            raw = raw + offset.astype(raw.dtype)
        return NAOPredictionSet(z_nao, ad.sigmoid(raw), self.class_head(z_nao))
