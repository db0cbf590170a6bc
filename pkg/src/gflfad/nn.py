"""Transformer building blocks on top of :mod:`gflfad.autodiff`.

Modules are plain classes holding :class:`~gflfad.autodiff.Parameter`
objects; ``named_parameters`` yields them in a fixed order so that
checkpoints and optimizer state line up across runs.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

INIT_STD = 0.02


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD, dtype=np.float64) -> np.ndarray:
    """Zero-mean Gaussian truncated at +-2 std (by resampling)."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, dtype=np.float64):
        self.weight = Parameter(trunc_normal(rng, (d_in, d_out), dtype=dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ad.ShapeError(f"Linear: expected last extent {self.d_in}, got {x.shape}")
        lead = x.shape[:-1]
        rows = int(np.prod(lead)) if lead else 1
        y = ad.matmul(ad.reshape(x, (rows, self.d_in)), self.weight)
        if self.bias is not None:
            y = ad.add(y, ad.expand(self.bias, (rows, self.d_out)))
        return ad.reshape(y, (*lead, self.d_out))


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float64):
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng, dtype=np.float64):
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.gelu(self.fc1(x)))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    x = ad.reshape(x, (b, n, heads, d // heads))
    x = ad.transpose(x, (0, 2, 1, 3))
    return ad.reshape(x, (b * heads, n, d // heads))


def _merge_heads(x: Tensor, batch: int, heads: int) -> Tensor:
    _, n, dk = x.shape
    x = ad.reshape(x, (batch, heads, n, dk))
    x = ad.transpose(x, (0, 2, 1, 3))
    return ad.reshape(x, (batch, n, heads * dk))


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, allowed: np.ndarray | None = None):
    """``softmax(q k^T / sqrt(d_k)) v`` over ``(G, n, d_k)`` stacks.

    ``allowed`` is an optional boolean ``(n_q, n_k)`` pattern shared by all
    groups. Returns ``(output, weights)``.
    """
    g, nq, dk = q.shape
    nk = k.shape[1]
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(dk))
    mask = None
    if allowed is not None:
        mask = np.broadcast_to(np.asarray(allowed, dtype=bool), (g, nq, nk))
    weights = ad.softmax(scores, axis=-1, mask=mask)
    return ad.matmul(weights, v), weights


class MultiHeadAttention(Module):
    """Multi-head attention: per-head projections, concat, output projection."""

    def __init__(self, dim: int, heads: int, rng, dtype=np.float64):
        if dim % heads:
            raise ValueError(f"model dimension {dim} not divisible by {heads} heads")
        self.heads = heads
        self.wq = Linear(dim, dim, rng, dtype=dtype)
        self.wk = Linear(dim, dim, rng, dtype=dtype)
        self.wv = Linear(dim, dim, rng, dtype=dtype)
        self.wo = Linear(dim, dim, rng, dtype=dtype)

    def __call__(self, xq: Tensor, xkv: Tensor, allowed=None, return_weights: bool = False):
        b = xq.shape[0]
        q = _split_heads(self.wq(xq), self.heads)
        k = _split_heads(self.wk(xkv), self.heads)
        v = _split_heads(self.wv(xkv), self.heads)
        out, weights = scaled_dot_product_attention(q, k, v, allowed)
        out = self.wo(_merge_heads(out, b, self.heads))
        if return_weights:
            return out, weights
        return out


class TransformerBlock(Module):
    """Pre-norm self-attention block: ``x + attn(ln(x))`` then ``x + ffn(ln(x))``."""

    def __init__(self, dim: int, heads: int, rng, mlp_ratio: int = 4, dtype=np.float64):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.ffn = FeedForward(dim, mlp_ratio * dim, rng, dtype=dtype)

    def __call__(self, x: Tensor, allowed=None) -> Tensor:
        h = self.norm1(x)
        x = ad.add(x, self.attn(h, h, allowed))
        return ad.add(x, self.ffn(self.norm2(x)))
