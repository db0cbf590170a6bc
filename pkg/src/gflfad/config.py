"""Training configuration, flat ``key = value`` config files, and named profiles."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .fusion import FusionConfig
from .mae import MaeConfig
from .patching import MASK_POLICIES


@dataclass(frozen=True)
class TrainConfig:
    # optimisation
    epochs: int = 30
    batch_size: int = 16
    lr_peak: float = 1e-3
    lr_min: float = 0.0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # objective
    alpha: float = 0.01
    mask_ratio: float = 0.3
    mask_policy: str = "unstructured"
    eval_mask_ratio: float | None = None
    eval_seed: int = 12345
    ce_class_weights: tuple[float, ...] | None = None
    # ablations / freezing
    disable_gar: bool = False
    disable_bn_branch: bool = False
    disable_crer_branch: bool = False
    freeze_encoder: bool = False
    freeze_decoder: bool = False
    # runs
    seeds: tuple[int, ...] = (0, 1, 2)
    precision: int = 64
    # model
    enc_layers: int = 2
    dec_layers: int = 2
    embed_dim: int = 64
    dec_dim: int = 48
    heads: int = 4
    local_window: int = 2
    patch_h: int = 16
    patch_w: int = 16
    fusion_dim: int = 64
    fusion_heads: int = 4
    fusion_depth: int = 1
    # frontend
    n_mels: int = 128
    target_samples: int = 64600
    # metrics (no defaults: must be supplied for min t-DCF)
    tdcf_c1: float | None = None
    tdcf_c2: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must lie in [0, 1)")
        if self.eval_mask_ratio is not None and not 0.0 <= self.eval_mask_ratio < 1.0:
            raise ValueError("eval_mask_ratio must lie in [0, 1)")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.disable_bn_branch and self.disable_crer_branch:
            raise ValueError("disable_bn_branch and disable_crer_branch are mutually exclusive")
        if self.mask_policy not in MASK_POLICIES:
            raise ValueError(f"mask_policy must be one of {MASK_POLICIES}")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        if not self.seeds:
            raise ValueError("at least one seed required")

    @property
    def mae(self) -> MaeConfig:
        return MaeConfig(
            enc_layers=self.enc_layers,
            dec_layers=self.dec_layers,
            embed_dim=self.embed_dim,
            dec_dim=self.dec_dim,
            heads=self.heads,
            local_window=self.local_window,
            patch_h=self.patch_h,
            patch_w=self.patch_w,
        )

    @property
    def fusion(self) -> FusionConfig:
        return FusionConfig(d_model=self.fusion_dim, heads=self.fusion_heads, depth=self.fusion_depth)

    @property
    def dtype(self) -> str:
        return "float64" if self.precision == 64 else "float32"

    @property
    def eval_ratio(self) -> float:
        return self.mask_ratio if self.eval_mask_ratio is None else self.eval_mask_ratio

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: _coerce(known[k], v) for k, v in d.items()})


PROFILES = {
    "desk": {},
    # full recipe: ViT-B encoder, 16-layer decoder, 100 epochs at lr 5e-6
    "full": dict(
        epochs=100,
        lr_peak=5e-6,
        enc_layers=12,
        dec_layers=16,
        embed_dim=768,
        dec_dim=512,
        heads=16,
        fusion_dim=768,
        fusion_heads=16,
        precision=32,
    ),
}


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(f: dataclasses.Field, value):
    """Convert a string or JSON value to the field's declared type."""
    kind = str(f.type)
    if value is None:
        return None
    if isinstance(value, str):
        text = value.strip()
        if "None" in kind and text.lower() in ("", "none", "null"):
            return None
        if "tuple" in kind:
            parts = [p for p in text.replace(",", " ").split() if p]
            conv = int if "int" in kind else float
            return tuple(conv(p) for p in parts)
        if kind.startswith("bool"):
            return _parse_bool(text)
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
        return text
    if "tuple" in kind:
        return tuple(value)
    return value


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None, profile: str = "desk") -> TrainConfig:
    """Profile defaults, then the config file, then explicit overrides."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    values: dict = dict(PROFILES[profile])
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(), str(path)))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return TrainConfig.from_dict(values)


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(repr(x) for x in v)
        lines.append(f"{k} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"

