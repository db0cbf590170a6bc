"""End-to-end detector: patch embedding, MAE backbone, fusion, classifier, losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .classifier import ClassifierHead
from .fusion import Fusion, FusionConfig
from .losses import ce_loss, gar_loss, recon_loss_per_sample, total_loss
from .mae import BnFeatures, Crer, Decoder, Encoder, MaeConfig, standardize_targets
from .nn import Module
from .patching import mask_count, patchify, sample_mask


@dataclass
class ForwardResult:
    logits: Tensor
    l_ce: Tensor | None
    l_gar: Tensor | None
    l_total: Tensor | None
    recon_per_sample: Tensor | None
    bn: BnFeatures
    crer: Crer | None
    masked_idx: np.ndarray
    visible_idx: np.ndarray


def draw_masks(batch: int, F: int, T: int, ratio: float, rng: np.random.Generator, policy: str = "unstructured"):
    """Independent mask per sample; returns ``(masked (B, k), visible (B, N-k))``."""
    n = F * T
    k = mask_count(n, ratio)
    masked = np.empty((batch, k), dtype=np.int64)
    visible = np.empty((batch, n - k), dtype=np.int64)
    for i in range(batch):
        part = sample_mask(n, ratio, rng, policy=policy, grid=(F, T))
        masked[i] = part.masked_idx
        visible[i] = part.visible_idx
    return masked, visible


class GflFad(Module):
    def __init__(
        self,
        mae: MaeConfig = MaeConfig(),
        fusion: FusionConfig = FusionConfig(),
        seed: int = 0,
        dtype=np.float64,
    ):
        rng = np.random.default_rng(seed)
        self.mae_cfg = mae
        self.fusion_cfg = fusion
        self.dtype = np.dtype(dtype)
        self.encoder = Encoder(mae, rng, dtype=dtype)
        self.decoder = Decoder(mae, rng, dtype=dtype)
        self.fusion = Fusion(mae.embed_dim, mae.dec_dim, fusion, rng, dtype=dtype)
        self.head = ClassifierHead(fusion.d_model, rng, dtype=dtype)

    def patch_grid(self, spectrograms):
        return patchify(spectrograms, self.mae_cfg.patch_h, self.mae_cfg.patch_w)

    def forward(
        self,
        spectrograms: np.ndarray,
        labels,
        masked_idx: np.ndarray,
        visible_idx: np.ndarray,
        alpha: float = 0.01,
        disable_gar: bool = False,
        disable_bn_branch: bool = False,
        disable_crer_branch: bool = False,
        class_weights=None,
    ) -> ForwardResult:
        """Full pass on a ``(B, mels, frames)`` stack with precomputed masks.

        With ``labels=None`` only the logits are computed (loss fields None).
        """
        if disable_bn_branch and disable_crer_branch:
            raise ValueError("at most one of the BN / CRER branches can be disabled")
        grid = self.patch_grid(spectrograms)
        pixels = Tensor(grid.patches, dtype=self.dtype)
        xp = self.encoder.embed(pixels, grid.F, grid.T)
        bn = self.encoder.encode(xp, visible_idx)

        crer = None
        if not disable_crer_branch:
            crer = self.decoder.decode(bn, masked_idx, grid.F, grid.T)
        fused = self.fusion(
            None if disable_bn_branch else bn.values,
            None if crer is None else crer.values,
        )
        logits = self.head(fused)
        result = ForwardResult(logits, None, None, None, None, bn, crer, masked_idx, visible_idx)
        if labels is None:
            return result

        labels = np.asarray(labels)
        result.l_gar = Tensor(np.zeros((), dtype=self.dtype))
        if crer is not None:
            target = standardize_targets(grid.patches)
            result.recon_per_sample = recon_loss_per_sample(crer.pixel_pred, target, masked_idx)
            result.l_gar = gar_loss(result.recon_per_sample, labels)
        result.l_ce = ce_loss(logits, labels, class_weights)
        if disable_gar:
            # logged but contributes nothing to the objective
            result.l_total = total_loss(result.l_ce, result.l_gar.detach(), 0.0)
        else:
            result.l_total = total_loss(result.l_ce, result.l_gar, alpha)
        return result
