"""AdamW with cosine annealing, the training loop, evaluation, and sweeps."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .classifier import scores_from_logits
from .config import TrainConfig
from .data import Utterance, batch_indices
from .frontend import FrontendConfig, fix_length, log_mel
from .losses import LossBundle
from .metrics import EvalReport, MetricError, ScoreSet, TdcfCosts, compute_eer, compute_min_tdcf, write_metrics_csv, write_scores
from .model import GflFad, draw_masks
from .patching import mask_count, sample_mask

log = logging.getLogger(__name__)

LOG_HEADER = "epoch,l_ce,l_gar,l_total,lr,dev_eer"
SWEEP_AXES = ("mask_ratio", "alpha")


class TrainingDiverged(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# optimiser and schedule
# ---------------------------------------------------------------------------


def cosine_lr(step: int, total_steps: int, lr_peak: float, lr_min: float = 0.0) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_peak - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def adamw_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One AdamW update (``t`` counts from 1); returns new ``(param, m, v)``.

    Decoupled decay first (``param *= 1 - lr * wd``), then the
    bias-corrected Adam step.
    """
    if not (param.shape == grad.shape == m.shape == v.shape):
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}, m {m.shape}, v {v.shape}")
    b1, b2 = betas
    dt = param.dtype.type
    p = param * dt(1.0 - lr * weight_decay) if weight_decay else param.copy()
    m = dt(b1) * m + dt(1.0 - b1) * grad
    v = dt(b2) * v + dt(1.0 - b2) * grad * grad
    m_hat = m / dt(1.0 - b1**t)
    v_hat = v / dt(1.0 - b2**t)
    p = p - dt(lr) * m_hat / (np.sqrt(v_hat) + dt(eps))
    return p, m, v


class AdamW:
    def __init__(self, named_params: dict, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = named_params
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in named_params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in named_params.items()}

    def step(self, lr: float, skip: frozenset = frozenset()) -> None:
        self.t += 1
        for name, p in self.params.items():
            if name in skip:
                continue
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data, self.m[name], self.v[name] = adamw_step(
                p.data, g, self.m[name], self.v[name], self.t, lr, self.betas, self.eps, self.weight_decay
            )


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def compute_features(corpus: Sequence[Utterance], cfg: TrainConfig) -> np.ndarray:
    """Log-mel spectrograms of the fixed-length waveforms, ``(n, mels, frames)``."""
    fe = FrontendConfig(n_mels=cfg.n_mels)
    return np.stack([log_mel(fix_length(u.waveform, cfg.target_samples), fe).values for u in corpus])


def corpus_labels(corpus: Sequence[Utterance]) -> np.ndarray:
    return np.array([u.label for u in corpus], dtype=np.int64)


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------


class Trainer:
    """Owns one seeded model, its optimiser state and its mask generator."""

    def __init__(self, cfg: TrainConfig, seed: int, total_steps: int = 1):
        self.cfg = cfg
        self.seed = seed
        self.model = GflFad(cfg.mae, cfg.fusion, seed=seed, dtype=cfg.dtype)
        self.named = dict(self.model.named_parameters())
        self.opt = AdamW(self.named, (cfg.beta1, cfg.beta2), cfg.adam_eps, cfg.weight_decay)
        self.mask_rng = np.random.default_rng([seed, 1])
        self.total_steps = total_steps
        self.step_count = 0
        self.epoch = 0
        frozen = set()
        if cfg.freeze_encoder:
            frozen |= {k for k in self.named if k.startswith("encoder.")}
        if cfg.freeze_decoder:
            frozen |= {k for k in self.named if k.startswith("decoder.")}
        self.frozen = frozenset(frozen)

    def grid_shape(self, spectrograms: np.ndarray) -> tuple[int, int]:
        mels, frames = spectrograms.shape[-2:]
        return -(-mels // self.cfg.patch_h), -(-frames // self.cfg.patch_w)

    def forward(self, spectrograms, labels, masked, visible):
        c = self.cfg
        return self.model.forward(
            spectrograms,
            labels,
            masked,
            visible,
            alpha=c.alpha,
            disable_gar=c.disable_gar,
            disable_bn_branch=c.disable_bn_branch,
            disable_crer_branch=c.disable_crer_branch,
            class_weights=c.ce_class_weights,
        )

    def step(self, spectrograms: np.ndarray, labels) -> tuple[LossBundle, float]:
        """One optimisation step; returns the losses and the learning rate used."""
        F, T = self.grid_shape(spectrograms)
        masked, visible = draw_masks(len(labels), F, T, self.cfg.mask_ratio, self.mask_rng, self.cfg.mask_policy)
        try:
            out = self.forward(spectrograms, labels, masked, visible)
        except ad.NonFiniteError as exc:
            raise TrainingDiverged(f"seed {self.seed} epoch {self.epoch} step {self.step_count}: {exc}") from exc
        ad.backward(out.l_total, list(self.named.values()))
        lr = cosine_lr(min(self.step_count, self.total_steps), self.total_steps, self.cfg.lr_peak, self.cfg.lr_min)
        self.opt.step(lr, self.frozen)
        bad = [k for k, p in self.named.items() if not np.all(np.isfinite(p.data))]
        if bad:
            raise TrainingDiverged(f"seed {self.seed} step {self.step_count}: non-finite parameters {bad[:3]}")
        self.step_count += 1
        bundle = LossBundle(out.l_ce.item(), out.l_gar.item(), out.l_total.item(), self.cfg.alpha)
        return bundle, lr

    def score(self, features: np.ndarray, batch_size: int | None = None) -> np.ndarray:
        """Detection scores with evaluation masks seeded per utterance position."""
        c = self.cfg
        n = features.shape[0]
        F, T = self.grid_shape(features)
        ratio = c.eval_ratio
        k = mask_count(F * T, ratio)
        bs = batch_size or c.batch_size
        out = np.empty(n)
        with ad.no_grad():
            for lo in range(0, n, bs):
                idx = range(lo, min(n, lo + bs))
                masked = np.empty((len(idx), k), dtype=np.int64)
                visible = np.empty((len(idx), F * T - k), dtype=np.int64)
                for j, i in enumerate(idx):
                    part = sample_mask(F * T, ratio, np.random.default_rng([c.eval_seed, i]), c.mask_policy, (F, T))
                    masked[j], visible[j] = part.masked_idx, part.visible_idx
                res = self.forward(features[lo : lo + len(idx)], None, masked, visible)
                out[lo : lo + len(idx)] = scores_from_logits(res.logits)
        return out

    # -- persistence ------------------------------------------------------

    def state(self) -> tuple[dict, dict]:
        tensors = {}
        for k, p in self.named.items():
            tensors[f"param/{k}"] = p.data
        for k in self.named:
            tensors[f"adam_m/{k}"] = self.opt.m[k]
            tensors[f"adam_v/{k}"] = self.opt.v[k]
        meta = {
            "config": self.cfg.to_dict(),
            "seed": self.seed,
            "epoch": self.epoch,
            "step": self.step_count,
            "total_steps": self.total_steps,
            "adam_t": self.opt.t,
            "mask_rng": self.mask_rng.bit_generator.state,
        }
        return tensors, meta

    def save(self, path) -> None:
        tensors, meta = self.state()
        save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path, cfg: TrainConfig | None = None) -> "Trainer":
        tensors, meta = load_checkpoint(path)
        stored = TrainConfig.from_dict(meta["config"])
        cfg = cfg or stored
        tr = cls(cfg, meta["seed"], meta["total_steps"])
        for k, p in tr.named.items():
            key = f"param/{k}"
            if key not in tensors:
                raise CheckpointError(f"{path}: missing parameter {k}")
            if tensors[key].shape != p.shape:
                raise CheckpointError(f"{path}: {k} has shape {tensors[key].shape}, model expects {p.shape}")
            p.data = tensors[key].astype(p.dtype)
            tr.opt.m[k] = tensors[f"adam_m/{k}"].astype(p.dtype)
            tr.opt.v[k] = tensors[f"adam_v/{k}"].astype(p.dtype)
        tr.opt.t = meta["adam_t"]
        tr.step_count = meta["step"]
        tr.epoch = meta["epoch"]
        tr.mask_rng.bit_generator.state = meta["mask_rng"]
        return tr


# ---------------------------------------------------------------------------
# train / evaluate / sweep
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    seed: int
    log_lines: list[str]
    checkpoints: list[Path]
    trainer: Trainer
    dev_eer: float | None = None


@dataclass
class TrainResult:
    runs: list[RunResult] = field(default_factory=list)

    @property
    def mean_dev_eer(self) -> float | None:
        vals = [r.dev_eer for r in self.runs if r.dev_eer is not None]
        return float(np.mean(vals)) if vals else None


def _check_corpus(corpus: Sequence[Utterance]) -> None:
    if not corpus:
        raise ValueError("empty corpus")
    labels = {u.label for u in corpus}
    if labels != {0, 1}:
        raise ValueError("training corpus must contain both genuine and spoof utterances")


def _fmt(x) -> str:
    return "nan" if x is None else repr(float(x))


def train_seed(
    cfg: TrainConfig,
    seed: int,
    features: np.ndarray,
    labels: np.ndarray,
    dev: tuple[np.ndarray, np.ndarray] | None = None,
    out_dir=None,
    resume: Trainer | None = None,
) -> RunResult:
    """Train one seed; ``resume`` continues a loaded trainer after its last epoch."""
    n = features.shape[0]
    steps_per_epoch = -(-n // cfg.batch_size)
    tr = resume or Trainer(cfg, seed, total_steps=cfg.epochs * steps_per_epoch)
    lines = [LOG_HEADER]
    log_path = None if out_dir is None else Path(out_dir) / f"seed{seed}" / "train_log.csv"
    if resume is not None and log_path is not None and log_path.exists():
        lines = log_path.read_text().splitlines()[: resume.epoch + 1]
    ckpts: list[Path] = []
    dev_eer = None
    for epoch in range(tr.epoch + 1, cfg.epochs + 1):
        tr.epoch = epoch
        sums = np.zeros(3)
        lr = cfg.lr_peak
        for idx in batch_indices(n, cfg.batch_size, seed, epoch):
            bundle, lr = tr.step(features[idx], labels[idx])
            sums += len(idx) * np.array([bundle.l_ce, bundle.l_gar, bundle.l_total])
        if not np.all(np.isfinite(sums)):
            raise TrainingDiverged(f"seed {seed} epoch {epoch}: non-finite epoch loss")
        means = sums / n
        dev_eer = None
        if dev is not None:
            try:
                dev_eer, _ = compute_eer(tr.score(dev[0]), dev[1])
            except MetricError:
                dev_eer = None
        line = ",".join([str(epoch), *(_fmt(v) for v in means), _fmt(lr), _fmt(dev_eer)])
        lines.append(line)
        log.info("seed %d %s", seed, line)
        if out_dir is not None:
            path = Path(out_dir) / f"seed{seed}" / f"epoch{epoch:03d}.ckpt"
            tr.save(path)
            ckpts.append(path)
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text("\n".join(lines) + "\n")
    return RunResult(seed, lines, ckpts, tr, dev_eer)


def train(
    cfg: TrainConfig,
    corpus: Sequence[Utterance],
    dev: Sequence[Utterance] | None = None,
    out_dir=None,
) -> TrainResult:
    """Train one model per seed in ``cfg.seeds``; checkpoints each epoch when ``out_dir`` is set."""
    _check_corpus(corpus)
    feats, labels = compute_features(corpus, cfg), corpus_labels(corpus)
    dev_data = (compute_features(dev, cfg), corpus_labels(dev)) if dev else None
    result = TrainResult()
    for seed in cfg.seeds:
        result.runs.append(train_seed(cfg, seed, feats, labels, dev_data, out_dir))
    if out_dir is not None:
        rows = [(f"dev_eer_seed{r.seed}", r.dev_eer) for r in result.runs if r.dev_eer is not None]
        if result.mean_dev_eer is not None:
            rows.insert(0, ("dev_eer_mean", result.mean_dev_eer))
        write_metrics_csv(Path(out_dir) / "report.csv", rows)
    return result


def _costs(cfg: TrainConfig) -> TdcfCosts | None:
    if cfg.tdcf_c1 is None or cfg.tdcf_c2 is None:
        return None
    return TdcfCosts(cfg.tdcf_c1, cfg.tdcf_c2)


def evaluate(
    ckpt,
    corpus: Sequence[Utterance],
    out_dir=None,
    cfg: TrainConfig | None = None,
    features: np.ndarray | None = None,
) -> EvalReport:
    """Score ``corpus`` with a checkpoint (path or :class:`Trainer`).

    Scores are written before metrics are computed, so a single-class corpus
    still leaves a score file behind and then raises :class:`MetricError`.
    """
    tr = ckpt if isinstance(ckpt, Trainer) else Trainer.load(ckpt, cfg)
    if features is None:
        features = compute_features(corpus, tr.cfg)
    scores = ScoreSet([u.utterance_id for u in corpus], tr.score(features), corpus_labels(corpus))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_scores(Path(out_dir) / "scores.txt", scores)
    report = EvalReport(scores)
    report.eer, report.threshold = compute_eer(scores)
    costs = _costs(tr.cfg)
    if costs is not None:
        report.min_tdcf = compute_min_tdcf(scores.scores, scores.labels, costs)
    if out_dir is not None:
        write_metrics_csv(Path(out_dir) / "metrics.csv", report.rows())
    return report


def train_and_evaluate(cfg: TrainConfig, corpus, eval_corpus) -> dict:
    """Train every seed, evaluate each final model; returns mean and per-seed metrics."""
    _check_corpus(corpus)
    feats, labels = compute_features(corpus, cfg), corpus_labels(corpus)
    eval_feats = compute_features(eval_corpus, cfg)
    per_seed = []
    for seed in cfg.seeds:
        run = train_seed(cfg, seed, feats, labels)
        rep = evaluate(run.trainer, eval_corpus, features=eval_feats)
        per_seed.append((seed, rep.eer, rep.min_tdcf))
    eers = [e for _, e, _ in per_seed]
    tdcfs = [t for _, _, t in per_seed if t is not None]
    return {
        "eer": float(np.mean(eers)),
        "min_tdcf": float(np.mean(tdcfs)) if tdcfs else None,
        "per_seed": per_seed,
    }


def sweep(axis: str, values: Sequence[float], cfg: TrainConfig, corpus, eval_corpus=None, out_path=None) -> list[tuple]:
    """Train and evaluate once per value of ``axis``; rows are ``(value, eer, min_tdcf)``."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ValueError("sweep needs at least one value")
    if _costs(cfg) is None:
        raise ValueError("sweep reports min t-DCF: set tdcf_c1 and tdcf_c2")
    configs = [cfg.replace(**{axis: float(v)}) for v in values]  # validates every value up front
    eval_corpus = eval_corpus if eval_corpus is not None else corpus
    rows = []
    for v, c in zip(values, configs):
        res = train_and_evaluate(c, corpus, eval_corpus)
        rows.append((float(v), res["eer"], res["min_tdcf"]))
        log.info("sweep %s=%s eer=%.6f min_tdcf=%.6f", axis, v, res["eer"], res["min_tdcf"])
    if out_path is not None:
        with Path(out_path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["value", "eer", "min_tdcf"])
            for v, e, t in rows:
                w.writerow([repr(v), repr(e), repr(t)])
    return rows
