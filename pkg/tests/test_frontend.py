import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gflfad.frontend import (
    LOG_FLOOR,
    FrontendConfig,
    FrontendError,
    Waveform,
    fix_length,
    frame_count,
    log_mel,
    read_wav,
    write_wav,
)

SR = 16000


def sine(freq, n=SR, amp=0.5):
    return Waveform(amp * np.sin(2 * np.pi * freq * np.arange(n) / SR))


def test_full_crop_shape():
    spec = log_mel(Waveform(np.random.default_rng(0).normal(size=64600)))
    assert spec.values.shape == (128, 402)
    assert (spec.mel_bands, spec.frames) == (128, 402)


def test_window_and_hop_samples():
    cfg = FrontendConfig()
    assert (cfg.window_samples, cfg.hop_samples, cfg.n_fft) == (400, 160, 512)


def test_zero_waveform_is_floor():
    spec = log_mel(Waveform(np.zeros(4000)))
    assert np.all(spec.values == np.log(LOG_FLOOR))


def _nearest_band_oracle(freq, n_mels=128, sr=SR):
    # independent HTK-mel centres: mel(f) = 1127 ln(1 + f/700)
    top = 1127.0 * np.log1p((sr / 2) / 700.0)
    mels = np.linspace(0.0, top, n_mels + 2)[1:-1]
    centers = 700.0 * np.expm1(mels / 1127.0)
    return int(np.argmin(np.abs(centers - freq)))


@pytest.mark.parametrize("freq", [1000.0, 440.0, 3000.0])
def test_sine_peaks_in_nearest_band(freq):
    spec = log_mel(sine(freq))
    expected = _nearest_band_oracle(freq)
    assert np.all(spec.values.argmax(axis=0) == expected)


def test_scaling_shifts_by_two_log_c():
    w = Waveform(np.random.default_rng(1).normal(size=8000))
    base = log_mel(w).values
    for c in (0.5, 3.0, 10.0):
        scaled = log_mel(Waveform(c * w.samples)).values
        ok = base > np.log(LOG_FLOOR) + 20  # well above floor dominance
        assert ok.mean() > 0.9
        np.testing.assert_allclose(scaled[ok] - base[ok], 2 * np.log(c), atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(window=st.integers(1, 600), hop=st.integers(1, 300), extra=st.integers(0, 5000))
def test_frame_count_formula(window, hop, extra):
    n = window + extra
    starts = range(0, n - window + 1, hop)
    assert frame_count(n, window, hop) == len(starts)


def test_deterministic():
    w = Waveform(np.random.default_rng(2).normal(size=5000))
    assert np.array_equal(log_mel(w).values, log_mel(w).values)


def test_errors():
    with pytest.raises(FrontendError):
        log_mel(Waveform(np.ones(399)))
    with pytest.raises(FrontendError):
        Waveform(np.array([0.0, np.inf]))
    with pytest.raises(FrontendError):
        Waveform(np.array([]))
    with pytest.raises(FrontendError, match="sample rate"):
        log_mel(Waveform(np.ones(1000), sample_rate=8000))


# -- fix_length --------------------------------------------------------------


def test_fix_length_truncates():
    x = np.arange(100000, dtype=float)
    np.testing.assert_array_equal(fix_length(Waveform(x), 64600).samples, x[:64600])


def test_fix_length_identity():
    x = np.random.default_rng(3).normal(size=64600)
    np.testing.assert_array_equal(fix_length(Waveform(x), 64600).samples, x)


def test_fix_length_tiles():
    x = np.random.default_rng(4).normal(size=30000)
    out = fix_length(Waveform(x), 64600).samples
    np.testing.assert_array_equal(out, np.concatenate([x, x, x[:4600]]))


def test_fix_length_bad_target():
    with pytest.raises(FrontendError):
        fix_length(Waveform(np.ones(10)), 0)


# -- wav io ------------------------------------------------------------------


@pytest.mark.parametrize("pcm16", [False, True])
def test_wav_round_trip(tmp_path, pcm16):
    x = 0.8 * np.sin(np.linspace(0, 50, 2000))
    write_wav(tmp_path / "a.wav", Waveform(x), pcm16=pcm16)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == SR
    np.testing.assert_allclose(back.samples, x, atol=1e-4 if pcm16 else 1e-7)
