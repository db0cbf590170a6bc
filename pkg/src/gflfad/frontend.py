"""Waveform to log-mel spectrogram frontend (16 kHz, 25 ms / 10 ms, 128 mels)."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000
TARGET_SAMPLES = 64600
LOG_FLOOR = 1e-10


class FrontendError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise FrontendError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(s)):
            raise FrontendError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = SAMPLE_RATE
    n_mels: int = 128
    window_s: float = 0.025
    hop_s: float = 0.010
    f_min: float = 0.0
    f_max: float | None = None

    @property
    def window_samples(self) -> int:
        return int(round(self.window_s * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_s * self.sample_rate))

    @property
    def n_fft(self) -> int:
        # next power of two covering the window
        return 1 << (self.window_samples - 1).bit_length()


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # (mel_bands, frames)
    frame_hop: float = 0.010
    frame_window: float = 0.025

    @property
    def mel_bands(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: FrontendConfig) -> np.ndarray:
    f_max = cfg.f_max if cfg.f_max is not None else cfg.sample_rate / 2
    mels = np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(f_max), cfg.n_mels + 2)
    return mel_to_hz(mels)[1:-1]


@lru_cache(maxsize=8)
def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Triangular HTK-mel filters, peak 1, evaluated at the rfft bin frequencies.

    Shape ``(n_mels, n_fft // 2 + 1)``.
    """
    f_max = cfg.f_max if cfg.f_max is not None else cfg.sample_rate / 2
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(f_max), cfg.n_mels + 2))
    freqs = np.fft.rfftfreq(cfg.n_fft, d=1.0 / cfg.sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def frame_count(n_samples: int, window: int, hop: int) -> int:
    return 1 + (n_samples - window) // hop


def log_mel(w: Waveform, cfg: FrontendConfig = FrontendConfig()) -> MelSpectrogram:
    """``log(mel_fb @ |STFT|^2 + 1e-10)`` with a periodic Hann window, no centering."""
    if w.sample_rate != cfg.sample_rate:
        raise FrontendError(f"sample rate {w.sample_rate} != expected {cfg.sample_rate}; resample first")
    win, hop = cfg.window_samples, cfg.hop_samples
    x = w.samples
    if x.size < win:
        raise FrontendError(f"waveform of {x.size} samples is shorter than one window ({win})")
    n_frames = frame_count(x.size, win, hop)
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win) / win)
    spec = np.fft.rfft(frames * window, n=cfg.n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    mel = mel_filterbank(cfg) @ power.T
    return MelSpectrogram(np.log(mel + LOG_FLOOR), frame_hop=cfg.hop_s, frame_window=cfg.window_s)


def fix_length(w: Waveform, target: int = TARGET_SAMPLES) -> Waveform:
    """Truncate to ``target`` samples, or tile cyclically up to it."""
    if target <= 0:
        raise FrontendError("target length must be positive")
    x = w.samples
    if x.size >= target:
        return Waveform(x[:target].copy(), w.sample_rate)
    reps = -(-target // x.size)
    return Waveform(np.tile(x, reps)[:target], w.sample_rate)


def read_wav(path) -> Waveform:
    """Read mono PCM16 / PCM32 / float32 WAV into a float waveform in [-1, 1]."""
    rate, data = wavfile.read(Path(path))
    if data.ndim != 1:
        raise FrontendError(f"{path}: expected single-channel audio, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype.kind == "f":
        samples = data.astype(np.float64)
    else:
        raise FrontendError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(samples, int(rate))


def write_wav(path, w: Waveform, pcm16: bool = False) -> None:
    if pcm16:
        data = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    else:
        data = w.samples.astype("<f4")
    wavfile.write(Path(path), w.sample_rate, data)
