"""ASVspoof-style protocol files, a seeded synthetic corpus, manifests, and batching."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .frontend import SAMPLE_RATE, TARGET_SAMPLES, Waveform, fix_length, read_wav, write_wav

KEYS = {"bonafide": 1, "spoof": 0}
SPOOF_ARTIFACTS = ("spectral_notch", "phase_jump", "harmonic_clip")


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolRecord:
    speaker_id: str
    utterance_id: str
    attack_id: str | None
    key: str

    @property
    def label(self) -> int:
        return KEYS[self.key]

    def to_line(self) -> str:
        return f"{self.speaker_id} {self.utterance_id} - {self.attack_id or '-'} {self.key}"


@dataclass(frozen=True)
class Utterance:
    utterance_id: str
    waveform: Waveform
    label: int


def parse_protocol_lines(lines, source: str = "<protocol>") -> list[ProtocolRecord]:
    records = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 5:
            raise ProtocolError(f"{source}: line {lineno}: expected 5 fields, got {len(fields)}")
        speaker, utt, _, attack, key = fields
        if key not in KEYS:
            raise ProtocolError(f"{source}: line {lineno}: unknown key {key!r} (expected bonafide or spoof)")
        records.append(ProtocolRecord(speaker, utt, None if attack == "-" else attack, key))
    return records


def parse_protocol(path) -> list[ProtocolRecord]:
    path = Path(path)
    with path.open() as fh:
        return parse_protocol_lines(fh, str(path))


def write_protocol(path, records: Sequence[ProtocolRecord]) -> None:
    Path(path).write_text("".join(r.to_line() + "\n" for r in records))


def protocol_summary(records: Sequence[ProtocolRecord]) -> dict:
    """Counts per key plus the attack ids present."""
    keys = Counter(r.key for r in records)
    attacks = sorted({r.attack_id for r in records if r.attack_id})
    return {"bonafide": keys.get("bonafide", 0), "spoof": keys.get("spoof", 0), "attacks": attacks}


def load_protocol_corpus(protocol, audio_dir, ext: str = ".wav") -> list[Utterance]:
    """Load WAV files named ``<utterance_id><ext>`` listed in a protocol file."""
    audio_dir = Path(audio_dir)
    return [
        Utterance(r.utterance_id, read_wav(audio_dir / f"{r.utterance_id}{ext}"), r.label)
        for r in parse_protocol(protocol)
    ]


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    n_genuine: int = 20
    n_spoof: int = 180
    duration_s: float = TARGET_SAMPLES / SAMPLE_RATE
    seed: int = 0
    spoof_artifact: str = "spectral_notch"
    sample_rate: int = SAMPLE_RATE
    snr_db: float = 30.0
    notch_hz: tuple[float, float] = (1800.0, 2600.0)

    def __post_init__(self):
        if self.n_genuine < 0 or self.n_spoof < 0:
            raise ValueError("utterance counts must be non-negative")
        if self.duration_s * self.sample_rate < 0.025 * self.sample_rate:
            raise ValueError("duration shorter than one analysis window")
        if self.spoof_artifact not in SPOOF_ARTIFACTS:
            raise ValueError(f"unknown spoof artifact {self.spoof_artifact!r}; choose from {SPOOF_ARTIFACTS}")


def _voiced_signal(rng: np.random.Generator, n: int, sr: int, snr_db: float) -> np.ndarray:
    t = np.arange(n) / sr
    f0 = rng.uniform(100.0, 300.0)
    vib_rate = rng.uniform(3.0, 7.0)
    vib_depth = rng.uniform(0.005, 0.03)
    inst_f0 = f0 * (1.0 + vib_depth * np.sin(2 * np.pi * vib_rate * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(inst_f0) / sr
    x = np.zeros(n)
    for h in range(1, int(rng.integers(3, 6)) + 1):
        x += rng.uniform(0.5, 1.0) / h * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    p_signal = np.mean(x**2)
    x += rng.normal(0.0, np.sqrt(p_signal / 10 ** (snr_db / 10)), size=n)
    return x


def _inject(x: np.ndarray, artifact: str, rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    sr = cfg.sample_rate
    if artifact == "spectral_notch":
        spec = np.fft.rfft(x)
        freqs = np.fft.rfftfreq(x.size, 1.0 / sr)
        lo, hi = cfg.notch_hz
        spec[(freqs >= lo) & (freqs <= hi)] = 0.0
        return np.fft.irfft(spec, n=x.size)
    if artifact == "phase_jump":
        out = x.copy()
        pos, sign = 0, 1.0
        while pos < x.size:
            seg = int(sr * rng.uniform(0.4, 0.6))
            out[pos : pos + seg] *= sign
            pos += seg
            sign = -sign
        return out
    # harmonic_clip
    level = 0.3 * np.max(np.abs(x))
    return np.clip(x, -level, level)


def _peak_normalize(x: np.ndarray, peak: float = 0.95) -> np.ndarray:
    m = np.max(np.abs(x))
    return x * (peak / m) if m > 0 else x


def synth_corpus(cfg: SynthConfig = SynthConfig()) -> list[Utterance]:
    """Deterministic genuine/spoof corpus; genuine first (``SYN_G_k``), then spoof (``SYN_S_k``)."""
    n = int(round(cfg.duration_s * cfg.sample_rate))
    root = np.random.SeedSequence(cfg.seed)
    g_seeds, s_seeds = root.spawn(2)
    out = []
    for k, ss in enumerate(g_seeds.spawn(cfg.n_genuine)):
        rng = np.random.default_rng(ss)
        x = _peak_normalize(_voiced_signal(rng, n, cfg.sample_rate, cfg.snr_db))
        out.append(Utterance(f"SYN_G_{k}", Waveform(x, cfg.sample_rate), 1))
    for k, ss in enumerate(s_seeds.spawn(cfg.n_spoof)):
        rng = np.random.default_rng(ss)
        x = _voiced_signal(rng, n, cfg.sample_rate, cfg.snr_db)
        x = _peak_normalize(_inject(x, cfg.spoof_artifact, rng, cfg))
        out.append(Utterance(f"SYN_S_{k}", Waveform(x, cfg.sample_rate), 0))
    return out


def write_corpus(corpus: Sequence[Utterance], out_dir, pcm16: bool = False) -> Path:
    """Write one WAV per utterance, a manifest CSV and a protocol file; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["utterance_id", "label", "path"])
        for u in corpus:
            rel = Path("wav") / f"{u.utterance_id}.wav"
            write_wav(out_dir / rel, u.waveform, pcm16=pcm16)
            writer.writerow([u.utterance_id, u.label, rel.as_posix()])
    write_protocol(
        out_dir / "protocol.txt",
        [
            ProtocolRecord("SYN", u.utterance_id, None if u.label else "SYN", "bonafide" if u.label else "spoof")
            for u in corpus
        ],
    )
    return manifest


def read_manifest(path) -> list[Utterance]:
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["utterance_id", "label", "path"]:
            raise ProtocolError(f"{path}: header must be utterance_id,label,path")
        for lineno, row in enumerate(reader, start=2):
            if row["label"] not in ("0", "1"):
                raise ProtocolError(f"{path}: line {lineno}: label must be 0 or 1")
            wav = Path(row["path"])
            if not wav.is_absolute():
                wav = path.parent / wav
            out.append(Utterance(row["utterance_id"], read_wav(wav), int(row["label"])))
    return out


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    waveforms: np.ndarray  # (B, target_samples)
    labels: np.ndarray
    utterance_ids: list[str]
    indices: np.ndarray


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffled record order for one epoch; depends only on (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_indices(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if n == 0:
        raise ValueError("no records to batch")
    order = epoch_order(n, seed, epoch)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def make_batches(
    records: Sequence[Utterance],
    batch_size: int,
    seed: int,
    epoch: int = 0,
    target: int = TARGET_SAMPLES,
) -> Iterator[Batch]:
    """Seeded per-epoch shuffle; the last short batch is kept."""
    for idx in batch_indices(len(records), batch_size, seed, epoch):
        chosen = [records[i] for i in idx]
        yield Batch(
            np.stack([fix_length(u.waveform, target).samples for u in chosen]),
            np.array([u.label for u in chosen], dtype=np.int64),
            [u.utterance_id for u in chosen],
            idx,
        )
