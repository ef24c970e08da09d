"""Training loop, evaluation and prediction helpers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .losses import COMPONENTS, LossWeights, NonFiniteLossError, compute_losses
from .metrics import EvalRecord, Prediction, metrics_report
from .model import NAOGAT, Batch, ModelOutput
from .structures import Clip

log = logging.getLogger(__name__)


def loss_weights(cfg: RunConfig) -> LossWeights:
    return LossWeights(cfg.w_iou, cfg.w_l1, cfg.w_noun, cfg.w_verb, cfg.w_ttc, cfg.no_object_weight)


def batches(clips: Sequence[Clip], size: int, order: Sequence[int] | None = None):
    order = range(len(clips)) if order is None else order
    order = list(order)
    for start in range(0, len(order), size):
        yield Batch.from_clips([clips[i] for i in order[start:start + size]])


def clip_gradients(params, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * np.float32(scale)
    return total


@dataclass
class TrainState:
    step: int = 0
    velocity: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)


def train_step(model: NAOGAT, batch: Batch, cfg: RunConfig, state: TrainState, lr: float | None = None) -> dict:
    """One SGD update on ``batch``; returns the loss components as floats."""
    output = model(batch)
    total, components, _ = compute_losses(output, batch, loss_weights(cfg))
    params = model.parameters()
    for p in params:
        p.grad = None
    ad.backward(total)
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    grad_norm = clip_gradients(params, cfg.grad_clip)
    lr = cfg.lr if lr is None else lr
    if cfg.optimizer == "adam":
        ad.adam_step(params, lr, state.velocity, cfg.weight_decay)
    else:
        ad.sgd_step(params, lr, cfg.weight_decay, cfg.momentum, state.velocity)
    state.step += 1
    entry = {"step": state.step, "total": float(total.data), "grad_norm": grad_norm}
    entry.update({k: float(components[k].data) for k in COMPONENTS})
    if not math.isfinite(entry["total"]):
        raise NonFiniteLossError("total", entry["total"])
    state.history.append(entry)
    return entry


def cosine_lr(base: float, step: int, total: int, warmup: int = 0) -> float:
    if warmup and step < warmup:
        return base * (step + 1) / warmup
    progress = min(1.0, (step - warmup) / max(1, total - warmup))
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))


def records_from_output(output: ModelOutput, batch: Batch, clips: Sequence[Clip]) -> list[EvalRecord]:
    """Per clip: every query scored by ``1 - p(no object)``, sharing the clip's verb and TTC."""
    logits = output.nao.class_logits.data.astype(np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    prob = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
    boxes = np.clip(output.nao.boxes_xyxy(), 0.0, 1.0)
    verbs = output.verb_logits.data.argmax(axis=-1)
    ttc = output.ttc.data.astype(np.float64)
    records = []
    for b, clip in enumerate(clips):
        preds = [Prediction(tuple(float(v) for v in boxes[b, q]), int(prob[b, q, :-1].argmax()), int(verbs[b]),
                            float(ttc[b]), float(1.0 - prob[b, q, -1])) for q in range(prob.shape[1])]
        records.append(EvalRecord(clip.clip_id, preds, clip.target))
    return records


def evaluate(model: NAOGAT, clips: Sequence[Clip], batch_size: int = 32) -> tuple[dict, list[EvalRecord], np.ndarray]:
    records: list[EvalRecord] = []
    verb_logits = []
    for start in range(0, len(clips), batch_size):
        chunk = clips[start:start + batch_size]
        batch = Batch.from_clips(chunk)
        output = model(batch)
        records.extend(records_from_output(output, batch, chunk))
        verb_logits.append(output.verb_logits.data)
    logits = np.concatenate(verb_logits) if verb_logits else np.zeros((0, model.cfg.num_verbs))
    return metrics_report(records, logits), records, logits


def train(cfg: RunConfig, train_clips: Sequence[Clip], val_clips: Sequence[Clip] | None = None,
          model: NAOGAT | None = None, on_step: Callable[[dict], None] | None = None,
          select_metric: str = "ap_b", log_every: int = 50) -> tuple[NAOGAT, dict, TrainState]:
    """Mini-batch SGD for ``cfg.epochs`` epochs with a fixed, seeded visiting order.

    Returns the model holding the best-by-validation parameters (the last ones
    when no validation set is given), the corresponding report and the state.
    """
    model = model or NAOGAT(cfg)
    state = TrainState()
    steps_per_epoch = math.ceil(len(train_clips) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    warmup = min(100, total_steps // 10)
    best_key = (-math.inf, -math.inf)
    best_state, best_report = None, {}
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_clips))
        for batch in batches(train_clips, cfg.batch_size, order):
            entry = train_step(model, batch, cfg, state, cosine_lr(cfg.lr, state.step, total_steps, warmup))
            entry["epoch"] = epoch
            if on_step:
                on_step(entry)
            if log_every and state.step % log_every == 0:
                log.info("step %d epoch %d total %.4f box %.3f noun %.3f verb %.3f ttc %.3f feat %.3f",
                         state.step, epoch, entry["total"], entry["box"], entry["noun"], entry["verb"],
                         entry["ttc"], entry["feat"])
        if val_clips:
            report, _, _ = evaluate(model, val_clips)
            report["epoch"] = epoch
            log.info("epoch %d val %s", epoch, {k: round(v, 4) for k, v in report.items()})
            key = (report[select_metric], report["top1_verb"] + report["ttc_correct_rate"])
            if key > best_key:
                best_key = key
                best_state = {k: v.copy() for k, v in model.state_dict().items()}
                best_report = report
    if best_state is not None:
        model.load_state_dict(best_state)
    return model, best_report, state
