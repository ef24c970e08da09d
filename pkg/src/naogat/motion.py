"""Motion block: fuse video memory with object motion, inject the NAO prior,
decode causally and predict the verb and time to contact."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .layers import MLP, EncoderBlock, LayerNorm, Linear, Module, sinusoidal_1d


@dataclass
class FusedSequence:
    z_prime: Tensor  # (..., T, D)
    pre_pool: Tensor  # (..., T, H*W, D)


def causal_mask(length: int) -> np.ndarray:
    """True where position ``t`` may attend to ``s`` (``s <= t``)."""
    return np.tril(np.ones((length, length), dtype=bool))


class MotionDecoder(Module):
    def __init__(self, dim: int, heads: int, hidden: int, layers: int, num_verbs: int,
                 rng: np.random.Generator, inject: bool = True):
        self.fuse_norm = LayerNorm(dim)
        self.fuse_mlp = MLP([dim, hidden, dim], rng)
        self.nao_proj = Linear(dim, dim, rng) if inject else None
        self.blocks = [EncoderBlock(dim, heads, hidden, rng) for _ in range(layers)]
        self.out_head = Linear(dim, dim, rng)
        self.verb_head = Linear(dim, num_verbs, rng)
        self.ttc_head = Linear(dim, 1, rng)

    def fuse(self, video_memory: Tensor, omd: Tensor | None) -> FusedSequence:
        x = video_memory
        if omd is not None:
            *lead, t, h, w, d = omd.shape
            if tuple(video_memory.shape) != (*lead, t, h * w, d):
                raise DimensionError(f"video memory {video_memory.shape} and motion grid {omd.shape} disagree")
            x = x + omd.reshape(*lead, t, h * w, d)
        pre_pool = self.fuse_mlp(self.fuse_norm(x))
        return FusedSequence(pre_pool.mean(axis=-2), pre_pool)

    def inject_nao(self, z_prime: Tensor, z_nao: Tensor) -> Tensor:
        """Add the projected mean of ``z_nao`` to the last observed frame only."""
        if self.nao_proj is None:
            return z_prime
        prior = self.nao_proj(z_nao.mean(axis=-2))
        last = z_prime[..., -1:, :] + prior.reshape(*prior.shape[:-1], 1, prior.shape[-1])
        return ad.concat([z_prime[..., :-1, :], last], axis=-2)

    def decode(self, decoder_input: Tensor) -> Tensor:
        """Slot ``t`` of the result predicts frame ``t + 1``; the last slot is the future frame."""
        t, d = decoder_input.shape[-2:]
        if t < 2:
            raise ValueError("the motion decoder needs at least two frames")
        x = decoder_input + sinusoidal_1d(t, d).astype(decoder_input.dtype)
        mask = causal_mask(t)
        for block in self.blocks:
            x = block(x, mask)
        return self.out_head(x)

    def predict_action(self, z_future: Tensor) -> tuple[Tensor, Tensor]:
        verb_logits = self.verb_head(z_future)
        ttc = ad.softplus(self.ttc_head(z_future))
        return verb_logits, ttc.reshape(ttc.shape[:-1])
