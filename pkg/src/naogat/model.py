"""The full short-term anticipation network and batched inputs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .config import RunConfig
from .encoder import Encoder, EncoderMemory
from .features import DetectionEmbedder, FrameEmbedder, TokenAssembler, detection_array
from .layers import Module
from .motion import FusedSequence, MotionDecoder
from .nao import NAODecoder, NAOHead, NAOPredictionSet, ObjectQueryBuilder, ObjectQuerySet
from .omd import ObjectMotion
from .structures import Clip


class CompatibilityError(ValueError):
    pass


@dataclass
class Batch:
    frames: np.ndarray  # (B, T, C, H0, W0)
    det_vectors: np.ndarray  # (B, T, Q, 5)
    det_real: np.ndarray  # (B, T, Q)
    target_box: np.ndarray  # (B, 4) xyxy
    target_noun: np.ndarray
    target_verb: np.ndarray
    target_ttc: np.ndarray
    present: np.ndarray
    clip_ids: list[str]

    @classmethod
    def from_clips(cls, clips: Sequence[Clip]) -> "Batch":
        dets = [detection_array(c.detections) for c in clips]
        return cls(
            frames=np.stack([c.frames for c in clips]).astype(np.float32, copy=False),
            det_vectors=np.stack([d[0] for d in dets]),
            det_real=np.stack([d[1] for d in dets]),
            target_box=np.array([c.target.box for c in clips], dtype=np.float64),
            target_noun=np.array([c.target.noun for c in clips], dtype=int),
            target_verb=np.array([c.target.verb for c in clips], dtype=int),
            target_ttc=np.array([c.target.ttc for c in clips], dtype=np.float64),
            present=np.array([c.target.nao_present for c in clips], dtype=bool),
            clip_ids=[c.clip_id for c in clips],
        )

    def __len__(self) -> int:
        return len(self.clip_ids)

    @property
    def boxes(self) -> np.ndarray:
        return self.det_vectors[..., :4]


@dataclass
class ModelOutput:
    tokens: Tensor
    memory: EncoderMemory
    queries: ObjectQuerySet
    nao: NAOPredictionSet
    omd: Tensor | None
    fused: FusedSequence
    decoder_input: Tensor
    z_hat: Tensor
    verb_logits: Tensor
    ttc: Tensor


class NAOGAT(Module):
    def __init__(self, cfg: RunConfig, seed: int | None = None):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        d, h, hidden = cfg.dim, cfg.heads, cfg.mlp_hidden
        self.frame_embed = FrameEmbedder(cfg.channels, cfg.patch, d, rng)
        self.det_embed = DetectionEmbedder(d, rng, scale=cfg.grid)
        self.assembler = TokenAssembler(cfg.grid, cfg.max_detections, d, rng)
        self.encoder = Encoder(d, h, hidden, cfg.encoder_layers, cfg.grid, rng, cfg.encoder_attention)
        self.query_builder = ObjectQueryBuilder(d, cfg.num_queries, cfg.grid, rng)
        self.nao_decoder = NAODecoder(d, h, hidden, cfg.nao_layers, rng) if cfg.nao_decoder_enabled else None
        self.nao_head = NAOHead(d, cfg.num_nouns, rng)
        self.omd = ObjectMotion(d, h, hidden, cfg.grid, rng) if cfg.omd_enabled else None
        self.motion = MotionDecoder(d, h, hidden, cfg.motion_layers, cfg.num_verbs, rng,
                                    inject=cfg.nao_injection_enabled)
        self.assign_names()

    def forward(self, batch: Batch) -> ModelOutput:
        cfg = self.cfg
        grids = self.frame_embed(batch.frames)
        det_tokens = self.det_embed(batch.det_vectors)
        tokens = self.assembler(grids, det_tokens)
        memory = self.encoder(tokens)

        boxes, real = batch.boxes, batch.det_real
        queries = self.query_builder(memory.z_T_grid, boxes[:, -1], real[:, -1])
        kv = memory.z_LT if cfg.nao_kv == "z_LT" else memory.z_LT[..., : cfg.grid * cfg.grid, :]
        z_nao = self.nao_decoder(queries.queries, kv) if self.nao_decoder is not None else queries.queries
        nao = self.nao_head(z_nao, queries.source_box, queries.is_roi)

        omd = self.omd(boxes, real) if self.omd is not None else None
        fused = self.motion.fuse(memory.video_memory, omd)
        decoder_input = self.motion.inject_nao(fused.z_prime, z_nao)
        z_hat = self.motion.decode(decoder_input)
        verb_logits, ttc = self.motion.predict_action(z_hat[:, -1, :])
        return ModelOutput(tokens, memory, queries, nao, omd, fused, decoder_input, z_hat, verb_logits, ttc)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))[:3]
            extra = sorted(set(state) - set(own))[:3]
            raise CompatibilityError(f"checkpoint parameters do not match model (missing {missing}, extra {extra})")
        for name, p in own.items():
            if p.shape != state[name].shape:
                raise CompatibilityError(f"{name}: checkpoint shape {state[name].shape} != model shape {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)


def predict(model: NAOGAT, batch: Batch) -> ModelOutput:
    """Forward pass with plain arrays (no graph needed by the caller)."""
    return model(batch)


def parameter_groups(model: NAOGAT) -> dict[str, list]:
    groups = {
        "backbone": [model.frame_embed, model.det_embed, model.assembler],
        "encoder": [model.encoder],
        "nao_decoder": [model.query_builder] + ([model.nao_decoder] if model.nao_decoder else []),
        "nao_heads": [model.nao_head],
        "omd": [model.omd] if model.omd else [],
        "motion_decoder": [model.motion],
    }
    return {k: [p for m in mods for p in m.parameters()] for k, mods in groups.items()}

