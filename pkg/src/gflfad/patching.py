"""Spectrogram patching, fixed 2-D sin/cos positional tables, and mask sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MASK_POLICIES = ("unstructured", "time", "freq")


@dataclass(frozen=True)
class PatchGrid:
    """Spectrogram cut into ``F x T`` patches, flattened f-major then t.

    ``patches`` is ``(N, patch_h * patch_w)``, or ``(B, N, patch_h * patch_w)``
    for a batch of equally-sized spectrograms.
    """

    patches: np.ndarray
    F: int
    T: int
    patch_h: int
    patch_w: int

    @property
    def N(self) -> int:
        return self.F * self.T

    @property
    def coords(self) -> np.ndarray:
        return patch_coords(self.F, self.T)


@dataclass(frozen=True)
class MaskPartition:
    masked_idx: np.ndarray
    visible_idx: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "masked_idx", np.sort(np.asarray(self.masked_idx, dtype=np.int64)))
        object.__setattr__(self, "visible_idx", np.sort(np.asarray(self.visible_idx, dtype=np.int64)))

    @property
    def N(self) -> int:
        return self.masked_idx.size + self.visible_idx.size

    @classmethod
    def from_masked(cls, masked, n: int) -> "MaskPartition":
        keep = np.ones(n, dtype=bool)
        keep[np.asarray(masked, dtype=np.int64)] = False
        return cls(np.flatnonzero(~keep), np.flatnonzero(keep))


def patch_coords(F: int, T: int) -> np.ndarray:
    """``(N, 2)`` array of ``(f, t)`` per flattened patch index."""
    f, t = np.divmod(np.arange(F * T), T)
    return np.stack([f, t], axis=1)


def patchify(spec, patch_h: int = 16, patch_w: int = 16) -> PatchGrid:
    """Zero-pad to patch multiples and cut into patches.

    ``spec`` is a :class:`~gflfad.frontend.MelSpectrogram`, a ``(mels, frames)``
    array or a ``(B, mels, frames)`` stack.
    """
    values = np.asarray(getattr(spec, "values", spec), dtype=np.float64)
    if patch_h < 1 or patch_w < 1:
        raise ValueError("patch sizes must be >= 1")
    squeeze = values.ndim == 2
    if squeeze:
        values = values[None]
    b, h, w = values.shape
    F, T = -(-h // patch_h), -(-w // patch_w)
    if F == 0 or T == 0:
        raise ValueError(f"patch {patch_h}x{patch_w} larger than padded spectrogram {h}x{w}")
    padded = np.zeros((b, F * patch_h, T * patch_w), dtype=values.dtype)
    padded[:, :h, :w] = values
    patches = padded.reshape(b, F, patch_h, T, patch_w).transpose(0, 1, 3, 2, 4)
    patches = patches.reshape(b, F * T, patch_h * patch_w)
    return PatchGrid(patches[0] if squeeze else patches, F, T, patch_h, patch_w)


def unpatchify(g: PatchGrid) -> np.ndarray:
    """Inverse of :func:`patchify`; returns the padded spectrogram."""
    p = g.patches
    squeeze = p.ndim == 2
    if squeeze:
        p = p[None]
    b = p.shape[0]
    out = p.reshape(b, g.F, g.T, g.patch_h, g.patch_w).transpose(0, 1, 3, 2, 4)
    out = out.reshape(b, g.F * g.patch_h, g.T * g.patch_w)
    return out[0] if squeeze else out


def _sincos_1d(dim: int, positions: np.ndarray) -> np.ndarray:
    omega = 1.0 / 10000.0 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    angles = positions.astype(np.float64)[:, None] * omega[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


@lru_cache(maxsize=32)
def sincos_pos_table(F: int, T: int, dim: int) -> np.ndarray:
    """Fixed ``(F*T, dim)`` table: first half encodes ``f``, second half ``t``.

    Each half is ``[sin(p * w_k), cos(p * w_k)]`` with
    ``w_k = 10000 ** (-k / (dim / 4))``, ``k = 0 .. dim/4 - 1``.
    """
    if dim % 4:
        raise ValueError(f"positional dimension {dim} must be divisible by 4")
    coords = patch_coords(F, T)
    table = np.concatenate(
        [_sincos_1d(dim // 2, coords[:, 0]), _sincos_1d(dim // 2, coords[:, 1])], axis=1
    )
    table.setflags(write=False)
    return table


def embed_with_pos(patches: Tensor, w_embed: Tensor, F: int, T: int) -> Tensor:
    """``X_p = patches @ W_embed + pos_table`` for ``(N, P)`` or ``(B, N, P)`` patches."""
    if not isinstance(patches, Tensor):
        patches = Tensor(patches, dtype=w_embed.dtype)
    p, c = w_embed.shape
    if patches.shape[-1] != p:
        raise ad.ShapeError(f"embed_with_pos: patch width {patches.shape[-1]} != projection rows {p}")
    n = patches.shape[-2]
    if n != F * T:
        raise ad.ShapeError(f"embed_with_pos: {n} patches but F*T = {F * T}")
    lead = patches.shape[:-1]
    rows = int(np.prod(lead))
    x = ad.reshape(ad.matmul(ad.reshape(patches, (rows, p)), w_embed), (*lead, c))
    pos = Tensor(sincos_pos_table(F, T, c), dtype=w_embed.dtype)
    return ad.add(x, ad.expand(pos, x.shape))


def mask_count(n: int, ratio: float) -> int:
    """``round(ratio * n)``, halves rounded up."""
    return int(math.floor(ratio * n + 0.5))


def sample_mask(
    n: int,
    ratio: float,
    rng: np.random.Generator,
    policy: str = "unstructured",
    grid: tuple[int, int] | None = None,
) -> MaskPartition:
    """Draw a mask of exactly ``round(ratio * n)`` patches.

    ``time`` masks whole t-columns and ``freq`` whole f-rows (``grid=(F, T)``
    required); the last structural unit is masked partially so the budget
    is met exactly.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"mask ratio {ratio} outside [0, 1)")
    k = mask_count(n, ratio)
    if k >= n:
        raise ValueError(f"mask ratio {ratio} masks all {n} patches")
    if policy == "unstructured":
        masked = rng.permutation(n)[:k]
    elif policy in ("time", "freq"):
        if grid is None or grid[0] * grid[1] != n:
            raise ValueError(f"policy {policy!r} needs grid=(F, T) with F*T = {n}")
        F, T = grid
        coords = patch_coords(F, T)
        axis = 1 if policy == "time" else 0
        units = rng.permutation(T if policy == "time" else F)
        chosen: list[int] = []
        for u in units:
            if len(chosen) >= k:
                break
            members = np.flatnonzero(coords[:, axis] == u)
            need = k - len(chosen)
            if members.size > need:
                members = rng.permutation(members)[:need]
            chosen.extend(members.tolist())
        masked = np.asarray(chosen, dtype=np.int64)
    else:
        raise ValueError(f"unknown mask policy {policy!r}; choose from {MASK_POLICIES}")
    return MaskPartition.from_masked(masked, n)

