"""Box geometry: conversions, IoU and generalized IoU.

Plain functions work on ``(x1, y1, x2, y2)`` tuples or numpy arrays with a
trailing axis of 4; ``tensor_giou`` and ``tensor_cxcywh_to_xyxy`` are the
differentiable counterparts used by the box loss.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def cxcywh_to_xyxy(b):
    b = np.asarray(b, dtype=np.float64)
    cx, cy, w, h = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def xyxy_to_cxcywh(b):
    b = np.asarray(b, dtype=np.float64)
    x1, y1, x2, y2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1], axis=-1)


def area(b):
    b = np.asarray(b, dtype=np.float64)
    return np.clip(b[..., 2] - b[..., 0], 0, None) * np.clip(b[..., 3] - b[..., 1], 0, None)


def _inter_union(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    return inter, area(a) + area(b) - inter


def iou(a, b):
    inter, union = _inter_union(a, b)
    out = np.divide(inter, union, out=np.zeros_like(union), where=union > 0)
    return float(out) if np.ndim(out) == 0 else out


def giou(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    inter, union = _inter_union(a, b)
    hull = (np.maximum(a[..., 2], b[..., 2]) - np.minimum(a[..., 0], b[..., 0])) * (
        np.maximum(a[..., 3], b[..., 3]) - np.minimum(a[..., 1], b[..., 1])
    )
    iou_ = np.divide(inter, union, out=np.zeros_like(union), where=union > 0)
    penalty = np.divide(hull - union, hull, out=np.zeros_like(hull), where=hull > 0)
    out = iou_ - penalty
    return float(out) if np.ndim(out) == 0 else out


def tensor_cxcywh_to_xyxy(b: Tensor) -> Tensor:
    cx, cy, w, h = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return ad.stack([cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5], axis=-1)


def tensor_giou(a: Tensor, b) -> Tensor:
    """Differentiable GIoU between ``(..., 4)`` xyxy boxes; ``a`` must have positive area."""
    b = ad.as_tensor(b)
    ax1, ay1, ax2, ay2 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bx1, by1, bx2, by2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    iw = ad.clamp_min(ad.minimum(ax2, bx2) - ad.maximum(ax1, bx1), 0.0)
    ih = ad.clamp_min(ad.minimum(ay2, by2) - ad.maximum(ay1, by1), 0.0)
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    hull = (ad.maximum(ax2, bx2) - ad.minimum(ax1, bx1)) * (ad.maximum(ay2, by2) - ad.minimum(ay1, by1))
    return inter / union - (hull - union) / hull
