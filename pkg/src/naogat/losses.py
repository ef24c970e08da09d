"""Set-matching training objective.

Per clip the ``N_q`` object predictions are matched one-to-one to the ground
truth objects; matched queries are supervised on box and noun, the others on
the no-object class.  Verb, time to contact and the predictive feature loss
are clip-level terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .boxes import cxcywh_to_xyxy, giou, tensor_cxcywh_to_xyxy, tensor_giou
from .matching import Assignment, CapacityError, match_cost_matrix


class LabelError(ValueError):
    pass


class InsufficientSequenceError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    def __init__(self, component: str, value: float):
        super().__init__(f"loss component {component!r} is not finite ({value})")
        self.component = component


@dataclass(frozen=True)
class LossWeights:
    iou: float = 1.0
    l1: float = 1.0
    noun: float = 1.0
    verb: float = 1.0
    ttc: float = 10.0
    no_object: float = 0.1

    def __post_init__(self):
        if min(self.iou, self.l1, self.noun, self.verb, self.ttc, self.no_object) < 0:
            raise ValueError("loss weights must be nonnegative")


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def matching_cost(boxes_cxcywh: np.ndarray, class_logits: np.ndarray, target_boxes: np.ndarray,
                  target_nouns: Sequence[int], weights: LossWeights) -> np.ndarray:
    """``(N_q, M)`` cost: ``-p(noun) + w_l1 * L1 + w_iou * (1 - giou)`` with xyxy boxes."""
    pred = cxcywh_to_xyxy(boxes_cxcywh)
    target_boxes = np.asarray(target_boxes, dtype=np.float64).reshape(-1, 4)
    prob = _softmax_np(np.asarray(class_logits, dtype=np.float64))
    nouns = np.asarray(target_nouns, dtype=int)
    if nouns.size and (nouns.min() < 0 or nouns.max() >= prob.shape[-1] - 1):
        raise LabelError(f"noun index out of vocabulary: {nouns.tolist()}")
    l1 = np.abs(pred[:, None, :] - target_boxes[None, :, :]).sum(-1)
    g = giou(pred[:, None, :], target_boxes[None, :, :])
    return -prob[:, nouns] + weights.l1 * l1 + weights.iou * (1.0 - g)


def hungarian_match(boxes_cxcywh: np.ndarray, class_logits: np.ndarray, target_boxes, target_nouns,
                    weights: LossWeights = LossWeights()) -> Assignment:
    if len(target_nouns) > len(boxes_cxcywh):
        raise CapacityError(f"{len(target_nouns)} targets exceed {len(boxes_cxcywh)} queries")
    cost = matching_cost(boxes_cxcywh, class_logits, target_boxes, target_nouns, weights)
    return match_cost_matrix(cost)


def box_loss(pred_xyxy: Tensor, target_xyxy, weights: LossWeights = LossWeights()) -> tuple[Tensor, bool]:
    """Mean over matched pairs of ``w_iou (1 - giou) + w_l1 |b - b_hat|_1``.

    ``pred_xyxy`` and ``target_xyxy`` are ``(P, 4)`` rows of matched pairs.
    Returns the loss and whether any pair existed (an empty set gives 0).
    """
    if pred_xyxy.shape[0] == 0:
        return Tensor(np.zeros((), dtype=pred_xyxy.dtype)), False
    target = np.asarray(target_xyxy, dtype=pred_xyxy.dtype)
    l1 = ad.absolute(pred_xyxy - target).sum(axis=-1)
    g = tensor_giou(pred_xyxy, target)
    per_pair = (1.0 - g) * weights.iou + l1 * weights.l1
    return per_pair.mean(), True


def cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Per-row categorical cross-entropy; ``target`` holds class indices."""
    target = np.asarray(target, dtype=int)
    k = logits.shape[-1]
    if target.size and (target.min() < 0 or target.max() >= k):
        raise LabelError(f"class index out of range for {k} classes: {np.unique(target).tolist()}")
    onehot = np.eye(k, dtype=logits.dtype)[target]
    return -(ad.log_softmax(logits) * onehot).sum(axis=-1)


def noun_loss(class_logits: Tensor, assignments: Sequence[Assignment], nouns: Sequence[Sequence[int]],
              no_object_weight: float = 0.1) -> Tensor:
    """Cross-entropy over all queries; unmatched queries target no-object, down-weighted.

    Each clip contributes ``sum_i w_i CE_i / N_q``; the result is the mean over clips.
    """
    *lead, num_q, k = class_logits.shape
    logits = class_logits.reshape(-1, num_q, k)
    labels = np.full(logits.shape[:2], k - 1, dtype=int)
    weight = np.full(logits.shape[:2], no_object_weight, dtype=logits.dtype)
    for b, (assignment, clip_nouns) in enumerate(zip(assignments, nouns)):
        for q, t in assignment.pairs:
            if not 0 <= clip_nouns[t] < k - 1:
                raise LabelError(f"noun index {clip_nouns[t]} out of vocabulary")
            labels[b, q] = clip_nouns[t]
            weight[b, q] = 1.0
    ce = cross_entropy(logits, labels)
    return ((ce * weight).sum(axis=-1) * (1.0 / num_q)).mean()


def verb_loss(verb_logits: Tensor, verbs) -> Tensor:
    return cross_entropy(verb_logits, verbs).mean()


def smooth_l1(diff: Tensor) -> Tensor:
    a = ad.absolute(diff)
    return ad.where(a.data < 1.0, (diff * diff) * 0.5, a - 0.5)


def ttc_loss(ttc_pred, ttc_target, mask: np.ndarray | None = None) -> Tensor:
    """Smooth-L1 (transition at 1 s) averaged over the clips selected by ``mask``."""
    pred = ad.as_tensor(ttc_pred)
    target = np.asarray(ttc_target, dtype=pred.dtype)
    per = smooth_l1(pred - target)
    if mask is None:
        return per.mean()
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return Tensor(np.zeros((), dtype=pred.dtype))
    return (per * mask.astype(pred.dtype)).sum() * (1.0 / mask.sum())


def feature_loss(z_hat: Tensor, z_prime) -> Tensor:
    """``sum_t |z_hat[t] - z'[t+1]|^2`` over the ``T-1`` aligned slots, target detached.

    ``z_prime`` may be a tensor or a plain array.  Leading axes are averaged.
    """
    t = z_hat.shape[-2]
    if t < 2:
        raise InsufficientSequenceError("feature loss needs at least two frames")
    target = (z_prime.data if isinstance(z_prime, Tensor) else np.asarray(z_prime))[..., 1:, :]
    diff = z_hat[..., :-1, :] - target
    per_clip = (diff * diff).sum(axis=(-1, -2)) if diff.ndim > 2 else (diff * diff).sum()
    return per_clip.mean()


COMPONENTS = ("box", "noun", "verb", "ttc", "feat")


def total_loss(components: dict, weights: LossWeights = LossWeights()) -> Tensor:
    """``L_box + w_noun L_noun + w_verb L_verb + w_ttc L_ttc + L_feat``."""
    for name in COMPONENTS:
        value = components[name]
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteLossError(name, float(np.asarray(arr).reshape(-1)[0]))
    c = {k: ad.as_tensor(v) for k, v in components.items()}
    return (c["box"] + c["noun"] * weights.noun + c["verb"] * weights.verb
            + c["ttc"] * weights.ttc + c["feat"])


def clip_targets(batch) -> tuple[list[np.ndarray], list[list[int]]]:
    """Ground-truth objects per clip: one box/noun when the object is present."""
    boxes, nouns = [], []
    for b in range(len(batch.present)):
        if batch.present[b]:
            boxes.append(batch.target_box[b][None, :])
            nouns.append([int(batch.target_noun[b])])
        else:
            boxes.append(np.zeros((0, 4)))
            nouns.append([])
    return boxes, nouns


def compute_losses(output, batch, weights: LossWeights = LossWeights(), assignments: list | None = None,
                   feature_target: np.ndarray | None = None) -> tuple[Tensor, dict, list[Assignment]]:
    """All loss components for a model output on a batch, plus the matchings used.

    ``assignments`` and ``feature_target`` replace the matching and the
    detached feature target; finite-difference checks pin them this way.
    """
    nao = output.nao
    target_boxes, target_nouns = clip_targets(batch)
    if assignments is None:
        boxes_np = nao.boxes.data.astype(np.float64)
        logits_np = nao.class_logits.data.astype(np.float64)
        assignments = [hungarian_match(boxes_np[b], logits_np[b], target_boxes[b], target_nouns[b], weights)
                       for b in range(len(target_nouns))]
    b_idx, q_idx, matched_targets = [], [], []
    for b, assignment in enumerate(assignments):
        for q, t in assignment.pairs:
            b_idx.append(b)
            q_idx.append(q)
            matched_targets.append(target_boxes[b][t])
    pred_xyxy = tensor_cxcywh_to_xyxy(nao.boxes)
    if b_idx:
        matched = pred_xyxy[np.array(b_idx), np.array(q_idx)]
        l_box, _ = box_loss(matched, np.array(matched_targets), weights)
    else:
        l_box = Tensor(np.zeros((), dtype=pred_xyxy.dtype))
    components = {
        "box": l_box,
        "noun": noun_loss(nao.class_logits, assignments, target_nouns, weights.no_object),
        "verb": verb_loss(output.verb_logits, batch.target_verb),
        "ttc": ttc_loss(output.ttc, batch.target_ttc, batch.present),
        "feat": feature_loss(output.z_hat, output.fused.z_prime if feature_target is None else feature_target),
    }
    return total_loss(components, weights), components, assignments
