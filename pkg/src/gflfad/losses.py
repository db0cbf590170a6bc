"""Masked reconstruction loss, genuine-only aggregation, cross-entropy, total objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_ALPHA = 0.01


@dataclass(frozen=True)
class LossBundle:
    l_ce: float
    l_gar: float
    l_total: float
    alpha: float


def recon_loss_per_sample(pred: Tensor, target, masked_idx) -> Tensor:
    """Mean squared error over the masked patch rows only.

    ``pred`` is ``(N, P)`` with ``masked_idx (M,)``, giving a scalar, or
    ``(B, N, P)`` with ``masked_idx (B, M)``, giving ``(B,)``. With no masked
    patches the loss is a constant 0.
    """
    target = target if isinstance(target, Tensor) else Tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ad.ShapeError(f"recon loss: pred {pred.shape} vs target {target.shape}")
    masked_idx = np.asarray(masked_idx, dtype=np.int64)
    batched = pred.ndim == 3
    if masked_idx.shape[-1] == 0:
        return Tensor(np.zeros(pred.shape[0] if batched else (), dtype=pred.dtype))
    if not batched:
        return ad.mse(ad.gather(pred, masked_idx), ad.gather(target, masked_idx))
    diff = ad.add(ad.gather(pred, masked_idx), ad.scale(ad.gather(target, masked_idx), -1.0))
    return ad.mean(ad.mul(diff, diff), axis=(1, 2))


def gar_loss(per_sample: Tensor, labels) -> Tensor:
    """``sum(label_i * L_i) / sum(label_i)``; exactly 0 when no sample is genuine."""
    labels = np.asarray(labels)
    if per_sample.shape != labels.shape or labels.ndim != 1:
        raise ad.ShapeError(f"gar loss: {per_sample.shape} losses vs {labels.shape} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("gar loss: labels must be 0 or 1")
    n_genuine = int(labels.sum())
    if n_genuine == 0:
        return Tensor(np.zeros((), dtype=per_sample.dtype))
    weights = Tensor(labels.astype(per_sample.dtype))
    return ad.scale(ad.sum_(ad.mul(per_sample, weights)), 1.0 / n_genuine)


def ce_loss(logits: Tensor, labels, class_weights=None) -> Tensor:
    labels = np.asarray(labels)
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("ce loss: labels must be 0 (spoof) or 1 (genuine)")
    return ad.cross_entropy(logits, labels.astype(np.int64), class_weights)


def total_loss(l_ce: Tensor, l_gar: Tensor, alpha: float = DEFAULT_ALPHA) -> Tensor:
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return ad.add(l_ce, ad.scale(l_gar, alpha))
