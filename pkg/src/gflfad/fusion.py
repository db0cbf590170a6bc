"""Cross-attention fusion: BN features query, CRER supplies keys and values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention


@dataclass(frozen=True)
class FusionConfig:
    d_model: int = 64
    heads: int = 4
    depth: int = 1

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.depth < 1:
            raise ValueError("fusion depth must be >= 1")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


class CrossAttentionBlock(Module):
    """``x = q + MHA(ln(q), ln(kv))``; ``x = x + FFN(ln(x))``."""

    def __init__(self, d_model: int, heads: int, rng, dtype=np.float64):
        self.norm_q = LayerNorm(d_model, dtype=dtype)
        self.norm_kv = LayerNorm(d_model, dtype=dtype)
        self.attn = MultiHeadAttention(d_model, heads, rng, dtype=dtype)
        self.norm_ff = LayerNorm(d_model, dtype=dtype)
        self.ffn = FeedForward(d_model, 4 * d_model, rng, dtype=dtype)

    def __call__(self, q: Tensor, kv: Tensor) -> Tensor:
        x = ad.add(q, self.attn(self.norm_q(q), self.norm_kv(kv)))
        return ad.add(x, self.ffn(self.norm_ff(x)))


class Fusion(Module):
    def __init__(self, bn_dim: int, crer_dim: int, cfg: FusionConfig, rng, dtype=np.float64):
        self.cfg = cfg
        self.proj_bn = Linear(bn_dim, cfg.d_model, rng, dtype=dtype)
        self.proj_crer = Linear(crer_dim, cfg.d_model, rng, dtype=dtype)
        self.blocks = [CrossAttentionBlock(cfg.d_model, cfg.heads, rng, dtype=dtype) for _ in range(cfg.depth)]

    def project_to_common(self, bn: Tensor, crer: Tensor) -> tuple[Tensor, Tensor]:
        return self.proj_bn(bn), self.proj_crer(crer)

    def attend(self, q_src: Tensor, kv_src: Tensor) -> Tensor:
        x = q_src
        for blk in self.blocks:
            x = blk(x, kv_src)
        return x

    def __call__(self, bn: Tensor | None, crer: Tensor | None) -> Tensor:
        """Fuse; with one branch missing, self-attend over the remaining one."""
        if bn is None and crer is None:
            raise ValueError("fusion needs at least one of BN features and CRER")
        if crer is None:
            q = self.proj_bn(bn)
            return self.attend(q, q)
        if bn is None:
            kv = self.proj_crer(crer)
            return self.attend(kv, kv)
        q, kv = self.project_to_common(bn, crer)
        return self.attend(q, kv)


def multi_head_cross_attention(q_src: Tensor, kv_src: Tensor, block: CrossAttentionBlock) -> Tensor:
    """One fusion block applied to already-projected queries and keys/values."""
    if q_src.shape[-1] != kv_src.shape[-1]:
        raise ad.ShapeError(f"query width {q_src.shape[-1]} != key/value width {kv_src.shape[-1]}")
    return block(q_src, kv_src)


__all__ = [
    "CrossAttentionBlock",
    "Fusion",
    "FusionConfig",
    "MultiHeadAttention",
    "multi_head_cross_attention",
]
