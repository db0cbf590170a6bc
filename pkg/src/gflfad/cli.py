"""Command-line entry point: ``gflfad {synth,train,evaluate,sweep,score}``.

Every :class:`~gflfad.config.TrainConfig` field is exposed as a flag of the
same name (``--mask_ratio`` or ``--mask-ratio``). Precedence: profile
defaults, then ``--config`` file, then flags.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import PROFILES, TrainConfig, config_to_text, load_config
from .data import SPOOF_ARTIFACTS, SynthConfig, load_protocol_corpus, parse_protocol, read_manifest, synth_corpus, write_corpus
from .metrics import MetricError, TdcfCosts, read_scores, score_report, write_metrics_csv
from .trainer import SWEEP_AXES, Trainer, compute_features, corpus_labels, evaluate, sweep, train, train_seed

log = logging.getLogger("gflfad")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", type=Path, help="flat 'key = value' config file")
    g.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    for f in fields(TrainConfig):
        names = [f"--{f.name}"]
        if "_" in f.name:
            names.append(f"--{f.name.replace('_', '-')}")
        kind = str(f.type)
        if kind.startswith("bool"):
            g.add_argument(*names, dest=f.name, nargs="?", const="true", default=None, metavar="BOOL")
        else:
            g.add_argument(*names, dest=f.name, default=None, metavar=f.name.upper())


def _config_from_args(args, base: dict | None = None) -> TrainConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(TrainConfig)}
    if base is not None:
        values = dict(base)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return TrainConfig.from_dict(values)
    return load_config(args.config, overrides, args.profile)


def _load_corpus(path: Path, audio_dir: Path | None = None):
    if path.suffix == ".csv":
        return read_manifest(path)
    return load_protocol_corpus(path, audio_dir if audio_dir is not None else path.parent)


def _add_corpus(p: argparse.ArgumentParser, flag: str = "--corpus", required: bool = True) -> None:
    p.add_argument(flag, type=Path, required=required, help="manifest CSV or protocol file")
    if flag == "--corpus":
        p.add_argument("--audio-dir", type=Path, help="WAV directory for a protocol file (default: its folder)")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_genuine=args.n_genuine,
        n_spoof=args.n_spoof,
        seed=args.seed,
        spoof_artifact=args.artifact,
        **({"duration_s": args.duration} if args.duration else {}),
    )
    manifest = write_corpus(synth_corpus(cfg), args.out, pcm16=args.pcm16)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    corpus = _load_corpus(args.corpus, args.audio_dir)
    dev = _load_corpus(args.dev) if args.dev else None
    if args.resume:
        _, meta = load_checkpoint(args.resume)
        cfg = _config_from_args(args, meta["config"])
        tr = Trainer.load(args.resume, cfg)
        feats, labels = compute_features(corpus, cfg), corpus_labels(corpus)
        dev_data = (compute_features(dev, cfg), corpus_labels(dev)) if dev else None
        run = train_seed(cfg, tr.seed, feats, labels, dev_data, args.out, resume=tr)
        print("\n".join(run.log_lines))
        return 0
    cfg = _config_from_args(args)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.txt").write_text(config_to_text(cfg))
    result = train(cfg, corpus, dev, args.out)
    for run in result.runs:
        print(f"# seed {run.seed}")
        print("\n".join(run.log_lines))
    return 0


def cmd_evaluate(args) -> int:
    corpus = _load_corpus(args.corpus, args.audio_dir)
    _, meta = load_checkpoint(args.checkpoint)
    cfg = _config_from_args(args, meta["config"])
    try:
        report = evaluate(args.checkpoint, corpus, args.out, cfg)
    except MetricError as exc:
        print(f"error: {exc} (scores written to {args.out / 'scores.txt'})", file=sys.stderr)
        return 2
    for name, value in report.rows():
        print(f"{name},{value!r}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    corpus = _load_corpus(args.corpus, args.audio_dir)
    eval_corpus = _load_corpus(args.eval_corpus) if args.eval_corpus else None
    values = [float(v) for v in args.values.replace(",", " ").split()]
    rows = sweep(args.axis, values, cfg, corpus, eval_corpus, args.out)
    print("value,eer,min_tdcf")
    for v, e, t in rows:
        print(f"{v!r},{e!r},{t!r}")
    return 0


def cmd_score(args) -> int:
    scores = read_scores(args.scores)
    if args.protocol.suffix == ".csv":
        labels = {u.utterance_id: u.label for u in read_manifest(args.protocol)}
    else:
        labels = {r.utterance_id: r.label for r in parse_protocol(args.protocol)}
    scores = scores.with_labels(labels)
    costs = TdcfCosts(args.tdcf_c1, args.tdcf_c2) if args.tdcf_c1 is not None and args.tdcf_c2 is not None else None
    report = score_report(scores, costs)
    if report.error:
        print(f"error: {report.error}", file=sys.stderr)
        return 2
    if args.out:
        write_metrics_csv(args.out, report.rows())
    print("metric,value")
    for name, value in report.rows():
        print(f"{name},{value!r}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gflfad", description="Genuine-focused fake audio detection toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic genuine/spoof corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-genuine", type=int, default=20)
    p.add_argument("--n-spoof", type=int, default=180)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--artifact", choices=SPOOF_ARTIFACTS, default="spectral_notch")
    p.add_argument("--duration", type=float, help="seconds (default 64600 samples)")
    p.add_argument("--pcm16", action="store_true", help="write 16-bit PCM instead of float32")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model per seed")
    _add_corpus(p)
    p.add_argument("--dev", type=Path, help="dev manifest for per-epoch EER")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", type=Path, help="continue from a checkpoint")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a corpus with a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    _add_corpus(p)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train/evaluate across alpha or mask_ratio values")
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    _add_corpus(p)
    _add_corpus(p, "--eval-corpus", required=False)
    p.add_argument("--out", type=Path, required=True, help="CSV path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("score", help="EER / min t-DCF from a score file")
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--protocol", type=Path, required=True, help="protocol file or manifest CSV with labels")
    p.add_argument("--tdcf-c1", "--tdcf_c1", dest="tdcf_c1", type=float)
    p.add_argument("--tdcf-c2", "--tdcf_c2", dest="tdcf_c2", type=float)
    p.add_argument("--out", type=Path, help="metrics CSV")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
