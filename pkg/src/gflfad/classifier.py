"""Pooled two-class head: mean-pool, layer norm, GELU MLP, logits (0 = spoof, 1 = genuine)."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import LayerNorm, Linear, Module


class ClassifierHead(Module):
    def __init__(self, d_model: int, rng, dtype=np.float64):
        self.norm = LayerNorm(d_model, dtype=dtype)
        self.fc1 = Linear(d_model, 2 * d_model, rng, dtype=dtype)
        self.fc2 = Linear(2 * d_model, 2, rng, dtype=dtype)

    def __call__(self, fused: Tensor) -> Tensor:
        """``fused`` is ``(B, rows, d_model)``; returns ``(B, 2)`` logits."""
        if fused.ndim != 3 or fused.shape[1] == 0:
            raise ad.ShapeError(f"classifier expects (B, rows>=1, d), got {fused.shape}")
        pooled = ad.mean(fused, axis=1)
        return self.fc2(ad.gelu(self.fc1(self.norm(pooled))))


def scores_from_logits(logits) -> np.ndarray:
    """Detection score: genuine logit minus spoof logit."""
    z = np.asarray(getattr(logits, "data", logits))
    return z[:, 1] - z[:, 0]
