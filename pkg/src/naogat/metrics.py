"""Short-term anticipation metrics: correctness predicates and pooled AP.

A prediction counts for a combination of outputs only if every output in the
combination is correct: box IoU >= 0.5, same noun, same verb, and time to
contact within 0.25 s.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .boxes import iou
from .structures import Box, STATarget

IOU_THRESHOLD = 0.5
TTC_TOLERANCE = 0.25
# boundary values must count as correct despite rounding in the inputs
_EPS = 1e-9

COMBOS = {
    "ap_b": ("box",),
    "ap_b_n": ("box", "noun"),
    "ap_b_n_ttc": ("box", "noun", "ttc"),
    "ap_b_n_v": ("box", "noun", "verb"),
    "ap_b_n_v_ttc": ("box", "noun", "verb", "ttc"),
    "ap_b_ttc": ("box", "ttc"),
    "ap_b_v": ("box", "verb"),
    "ap_b_v_ttc": ("box", "verb", "ttc"),
}
REPORT_KEYS = tuple(COMBOS) + ("top1_noun", "top1_verb", "ttc_correct_rate", "verb_top5_classmean", "num_clips")


class UndefinedAPError(ValueError):
    pass


@dataclass(frozen=True)
class Prediction:
    box: Box  # xyxy
    noun: int
    verb: int
    ttc: float
    confidence: float


@dataclass
class EvalRecord:
    clip_id: str
    predictions: list[Prediction]
    target: STATarget

    def __post_init__(self):
        # stable: equal confidences keep their original order
        self.predictions = sorted(self.predictions, key=lambda p: -p.confidence)


def box_correct(pred_box, gt_box) -> bool:
    return iou(pred_box, gt_box) >= IOU_THRESHOLD - _EPS


def ttc_correct(pred: float, gt: float) -> bool:
    return abs(pred - gt) <= TTC_TOLERANCE + _EPS


def prediction_correct(pred: Prediction, target: STATarget, combo: Iterable[str]) -> bool:
    if not target.nao_present:
        return False
    checks = {
        "box": lambda: box_correct(pred.box, target.box),
        "noun": lambda: pred.noun == target.noun,
        "verb": lambda: pred.verb == target.verb,
        "ttc": lambda: ttc_correct(pred.ttc, target.ttc),
    }
    return all(checks[c]() for c in combo)


def average_precision(tp: Sequence[bool], num_positives: int) -> float:
    """All-point interpolated area under the precision-recall curve."""
    if num_positives <= 0:
        raise UndefinedAPError("no ground-truth objects to recall")
    tp = np.asarray(tp, dtype=float)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / num_positives
    precision = ctp / np.arange(1, tp.size + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def ranked_predictions(records: Sequence[EvalRecord]):
    """All predictions pooled and sorted by confidence, then clip id, then rank in clip."""
    pooled = [(-p.confidence, r.clip_id, i, k) for k, r in enumerate(records) for i, p in enumerate(r.predictions)]
    pooled.sort(key=lambda item: item[:3])
    return [(records[k], records[k].predictions[i]) for _, _, i, k in pooled]


def ap_combo(records: Sequence[EvalRecord], combo: Iterable[str]) -> float:
    """Pooled AP where a target is consumed by its first fully-correct prediction."""
    combo = tuple(combo)
    if "box" not in combo:
        raise ValueError("every combination includes the box")
    if not records:
        raise UndefinedAPError("no records to evaluate")
    positives = sum(r.target.nao_present for r in records)
    consumed: set[str] = set()
    flags = []
    for record, pred in ranked_predictions(records):
        hit = record.clip_id not in consumed and prediction_correct(pred, record.target, combo)
        if hit:
            consumed.add(record.clip_id)
        flags.append(hit)
    return average_precision(flags, positives)


def top1(logits, target: int) -> bool:
    """Arg-max equality; ties resolve to the lowest class index."""
    return int(np.argmax(np.asarray(logits))) == int(target)


def topk_classmean(logits: Sequence, targets: Sequence[int], k: int) -> float:
    """Mean over classes present in ``targets`` of per-class top-``k`` recall."""
    if k < 1:
        raise ValueError("k must be at least 1")
    hits: dict[int, list[bool]] = {}
    for row, t in zip(logits, targets):
        order = np.argsort(-np.asarray(row), kind="stable")[:k]
        hits.setdefault(int(t), []).append(int(t) in order)
    if not hits:
        return 0.0
    return float(np.mean([np.mean(v) for v in hits.values()]))


def metrics_report(records: Sequence[EvalRecord], verb_logits: Sequence | None = None) -> dict:
    """Every AP column plus top-1 accuracies and the time-to-contact hit rate."""
    report = {key: ap_combo(records, combo) for key, combo in COMBOS.items()}
    present = [r for r in records if r.target.nao_present]
    best = [r.predictions[0] for r in present if r.predictions]
    report["top1_noun"] = float(np.mean([p.noun == r.target.noun for p, r in zip(best, present)])) if best else 0.0
    verbs = [r.predictions[0].verb == r.target.verb for r in records if r.predictions]
    report["top1_verb"] = float(np.mean(verbs)) if verbs else 0.0
    report["ttc_correct_rate"] = (float(np.mean([ttc_correct(p.ttc, r.target.ttc) for p, r in zip(best, present)]))
                                  if best else 0.0)
    if verb_logits is not None:
        report["verb_top5_classmean"] = topk_classmean(verb_logits, [r.target.verb for r in records], 5)
    else:
        report["verb_top5_classmean"] = 0.0
    report["num_clips"] = len(records)
    return {key: report[key] for key in REPORT_KEYS}


def format_report(report: dict) -> str:
    """Stable text form: one ``key: value`` line per metric, in schema order."""
    lines = []
    for key in REPORT_KEYS:
        value = report[key]
        lines.append(f"{key}: {value}" if isinstance(value, int) else f"{key}: {value:.6f}")
    return "\n".join(lines) + "\n"
