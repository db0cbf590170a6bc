"""Masked-autoencoder backbone.

The encoder runs over visible patches only and yields the bottleneck (BN)
features. The decoder re-inserts a learned mask token at every masked
position, attends locally over the (f, t) patch grid, and yields the
reconstruction-path representation (CRER): hidden states for all ``N``
positions plus per-patch pixel predictions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .nn import LayerNorm, Linear, Module, TransformerBlock, trunc_normal
from .patching import embed_with_pos, patch_coords, sincos_pos_table


@dataclass(frozen=True)
class MaeConfig:
    enc_layers: int = 2
    dec_layers: int = 2
    embed_dim: int = 64
    dec_dim: int = 48
    heads: int = 4
    local_window: int = 2
    patch_h: int = 16
    patch_w: int = 16

    def __post_init__(self):
        if self.embed_dim % self.heads or self.dec_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} and dec_dim {self.dec_dim} must divide by heads {self.heads}")
        if self.embed_dim % 4 or self.dec_dim % 4:
            raise ValueError("embed_dim and dec_dim must be multiples of 4 for 2-D sin/cos tables")
        if self.enc_layers < 0 or self.dec_layers < 0 or self.local_window < 0:
            raise ValueError("layer counts and local_window must be non-negative")

    @property
    def patch_pixels(self) -> int:
        return self.patch_h * self.patch_w


@dataclass
class BnFeatures:
    values: Tensor  # (B, N_visible, C)
    visible_idx: np.ndarray  # (B, N_visible), ascending per row


@dataclass
class Crer:
    values: Tensor  # (B, N, D_dec) decoder hidden states
    pixel_pred: Tensor  # (B, N, patch_pixels)


def standardize_targets(patches, eps: float = 1e-6) -> np.ndarray:
    """Per-patch ``(pixels - mean) / sqrt(var + eps)`` over the pixel axis."""
    p = np.asarray(getattr(patches, "patches", patches), dtype=np.float64)
    mu = p.mean(axis=-1, keepdims=True)
    var = p.var(axis=-1, keepdims=True)
    return (p - mu) / np.sqrt(var + eps)


@lru_cache(maxsize=32)
def local_attention_pattern(F: int, T: int, window: int) -> np.ndarray | None:
    """Boolean ``(N, N)``: True where ``|df| <= window`` and ``|dt| <= window``.

    ``window == 0`` means global attention and returns None.
    """
    if window == 0:
        return None
    c = patch_coords(F, T)
    d = np.abs(c[:, None, :] - c[None, :, :]).max(axis=-1)
    allowed = d <= window
    allowed.setflags(write=False)
    return allowed


def _as_batch_idx(idx, batch: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim == 1:
        idx = np.broadcast_to(idx, (batch, idx.size))
    if idx.shape[0] != batch:
        raise ad.ShapeError(f"index rows {idx.shape[0]} != batch {batch}")
    return np.sort(idx, axis=1)


class Encoder(Module):
    def __init__(self, cfg: MaeConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.patch_proj = Parameter(trunc_normal(rng, (cfg.patch_pixels, cfg.embed_dim), dtype=dtype))
        self.blocks = [TransformerBlock(cfg.embed_dim, cfg.heads, rng, dtype=dtype) for _ in range(cfg.enc_layers)]
        self.norm = LayerNorm(cfg.embed_dim, dtype=dtype) if cfg.enc_layers else None

    def embed(self, patches, F: int, T: int) -> Tensor:
        return embed_with_pos(patches, self.patch_proj, F, T)

    def encode(self, xp: Tensor, visible_idx) -> BnFeatures:
        """Transformer stack over the visible rows of ``xp`` (``(N, C)`` or ``(B, N, C)``)."""
        squeeze = xp.ndim == 2
        if squeeze:
            xp = ad.reshape(xp, (1, *xp.shape))
        vis = _as_batch_idx(visible_idx, xp.shape[0])
        if vis.shape[1] == 0:
            raise ValueError("encode: no visible patches")
        x = ad.gather(xp, vis)
        for blk in self.blocks:
            x = blk(x)
        if self.norm is not None:
            x = self.norm(x)
        if squeeze:
            x = ad.reshape(x, x.shape[1:])
            vis = vis[0]
        return BnFeatures(x, vis)


class Decoder(Module):
    def __init__(self, cfg: MaeConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.embed = Linear(cfg.embed_dim, cfg.dec_dim, rng, dtype=dtype)
        self.mask_token = Parameter(trunc_normal(rng, (cfg.dec_dim,), dtype=dtype))
        self.blocks = [TransformerBlock(cfg.dec_dim, cfg.heads, rng, dtype=dtype) for _ in range(cfg.dec_layers)]
        self.norm = LayerNorm(cfg.dec_dim, dtype=dtype) if cfg.dec_layers else None
        self.head = Linear(cfg.dec_dim, cfg.patch_pixels, rng, dtype=dtype)

    def decode(self, bn: BnFeatures, masked_idx, F: int, T: int) -> Crer:
        x = bn.values
        squeeze = x.ndim == 2
        if squeeze:
            x = ad.reshape(x, (1, *x.shape))
        b, nv, c = x.shape
        vis = _as_batch_idx(bn.visible_idx, b)
        masked = _as_batch_idx(masked_idx, b)
        n = F * T
        if nv + masked.shape[1] != n:
            raise ad.ShapeError(f"decode: {nv} visible + {masked.shape[1]} masked != N = {n}")
        y = self.embed(x)
        if masked.shape[1]:
            tokens = ad.expand(self.mask_token, (b, masked.shape[1], self.cfg.dec_dim))
            y = ad.concat([y, tokens], axis=1)
            order = np.concatenate([vis, masked], axis=1)
            y = ad.gather(y, np.argsort(order, axis=1, kind="stable"))
        pos = Tensor(sincos_pos_table(F, T, self.cfg.dec_dim), dtype=y.dtype)
        y = ad.add(y, ad.expand(pos, y.shape))
        allowed = local_attention_pattern(F, T, self.cfg.local_window)
        for blk in self.blocks:
            y = blk(y, allowed)
        if self.norm is not None:
            y = self.norm(y)
        pred = self.head(y)
        if squeeze:
            y = ad.reshape(y, y.shape[1:])
            pred = ad.reshape(pred, pred.shape[1:])
        return Crer(y, pred)
