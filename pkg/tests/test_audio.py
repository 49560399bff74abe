import math
import struct

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from finsep.audio import (AudioError, ChunkSpec, SilentSignalError, Waveform, WavFormatError, chunk, chunk_count,
                          denoise, estimate_noise_profile, hann, istft, overlap_add, peak_normalize, read_wav,
                          resample, spectrogram, spectrogram_to_csv, spectrogram_to_pgm, stft, stft_frames,
                          write_wav)


def _riff(fmt_tag, channels, rate, bits, payload):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


# -- WAV ---------------------------------------------------------------------

def test_pcm16_scaling(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(_riff(1, 1, 8000, 16, np.array([0, 16384, -16384], "<i2").tobytes()))
    w = read_wav(p)
    assert w.sample_rate == 8000
    np.testing.assert_array_equal(w.samples, [0.0, 0.5, -0.5])


def test_float32_read(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(_riff(3, 1, 8000, 32, np.array([0.25], "<f4").tobytes()))
    np.testing.assert_array_equal(read_wav(p).samples, [0.25])


def test_stereo_averaged(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(_riff(3, 2, 8000, 32, np.array([0.2, 0.4], "<f4").tobytes()))
    np.testing.assert_allclose(read_wav(p).samples, [0.3], rtol=1e-6)


def test_unsupported_format(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(_riff(1, 1, 8000, 24, b"\0" * 6))
    with pytest.raises(WavFormatError, match="unsupported format"):
        read_wav(p)


def test_truncated_file(tmp_path):
    p = tmp_path / "a.wav"
    blob = _riff(3, 1, 8000, 32, np.zeros(100, "<f4").tobytes())
    p.write_bytes(blob[:-40])
    with pytest.raises(WavFormatError, match="corrupt container"):
        read_wav(p)


def test_not_riff(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(b"hello world, not a wav")
    with pytest.raises(WavFormatError):
        read_wav(p)


def test_float32_roundtrip(tmp_path):
    p = tmp_path / "a.wav"
    x = np.array([0.1, -0.9], dtype=np.float32)
    write_wav(Waveform(x, 44100), p)
    w = read_wav(p)
    assert w.samples.tobytes() == x.tobytes()
    assert w.sample_rate == 44100


def test_pcm16_clips(tmp_path):
    p = tmp_path / "a.wav"
    write_wav(Waveform(np.array([1.5, -2.0, 0.5]), 8000), p, "pcm16")
    np.testing.assert_array_equal(read_wav(p).samples, [32767 / 32768, -1.0, 0.5])


def test_empty_wav(tmp_path):
    p = tmp_path / "a.wav"
    write_wav(Waveform(np.zeros(0), 8000), p)
    w = read_wav(p)
    assert len(w) == 0 and w.sample_rate == 8000


def test_unknown_encoding(tmp_path):
    with pytest.raises(WavFormatError):
        write_wav(Waveform(np.zeros(3), 8000), tmp_path / "a.wav", "mp3")


def test_unwritable_path_names_path(tmp_path):
    target = tmp_path / "missing" / "a.wav"
    with pytest.raises(OSError, match="missing"):
        write_wav(Waveform(np.zeros(3), 8000), target)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1, width=32), max_size=200))
def test_float32_roundtrip_property(tmp_path_factory, values):
    p = tmp_path_factory.mktemp("rt") / "a.wav"
    x = np.array(values, dtype=np.float32)
    write_wav(Waveform(x, 16000), p)
    assert read_wav(p).samples.tobytes() == x.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), max_size=200))
def test_pcm16_roundtrip_within_lsb(tmp_path_factory, values):
    p = tmp_path_factory.mktemp("rt") / "a.wav"
    x = np.array(values, dtype=np.float64)
    write_wav(Waveform(x, 16000), p, "pcm16")
    y = read_wav(p).samples
    assert np.all(np.abs(y - np.clip(x, -1, 32767 / 32768)) <= 1 / 32768)


def test_waveform_invariants():
    with pytest.raises(AudioError):
        Waveform(np.array([0.0, np.nan]), 8000)
    with pytest.raises(AudioError):
        Waveform(np.zeros(3), 0)
    with pytest.raises(AudioError):
        Waveform(np.zeros((2, 3)), 8000)


# -- level and rate ------------------------------------------------------------

def test_peak_normalize_example():
    w = peak_normalize(Waveform(np.array([0.1, -0.5, 0.25]), 8000))
    assert abs(np.max(np.abs(w.samples)) - 0.891251) < 1e-6
    assert abs(np.max(np.abs(w.samples)) - 10 ** (-1 / 20)) < 1e-9


def test_peak_normalize_identity():
    x = np.array([0.2, -(10 ** (-1 / 20))])
    np.testing.assert_allclose(peak_normalize(Waveform(x, 8000)).samples, x, atol=1e-9)


def test_peak_normalize_silent():
    with pytest.raises(SilentSignalError, match="silent"):
        peak_normalize(Waveform(np.zeros(10), 8000))
    with pytest.raises(AudioError):
        peak_normalize(Waveform(np.zeros(0), 8000))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=100).filter(lambda v: max(map(abs, v)) > 1e-6),
       st.floats(-40, 0))
def test_peak_normalize_property(values, target):
    x = np.array(values)
    y = peak_normalize(Waveform(x, 8000), target).samples
    assert abs(np.max(np.abs(y)) - 10 ** (target / 20)) < 1e-9
    g = 10 ** (target / 20) / np.max(np.abs(x))
    np.testing.assert_allclose(y, g * x, rtol=1e-12, atol=1e-15)


def test_resample_identity():
    x = np.random.default_rng(0).standard_normal(1000) * 0.1
    w = resample(Waveform(x, 44100), 44100)
    np.testing.assert_array_equal(w.samples, x)


def test_resample_dc():
    w = resample(Waveform(np.ones(192000), 192000), 44100)
    assert w.sample_rate == 44100 and len(w) == 44100
    mid = w.samples[1000:-1000]
    assert np.max(np.abs(mid - 1.0)) < 1e-3


def test_resample_sine_peak():
    n = 192000
    t = np.arange(n) / 192000
    w = resample(Waveform(0.5 * np.sin(2 * np.pi * 1000 * t), 192000), 44100)
    spec = np.abs(np.fft.rfft(w.samples))
    freqs = np.fft.rfftfreq(len(w), 1 / 44100)
    bin_hz = freqs[1]
    assert abs(freqs[np.argmax(spec)] - 1000) <= bin_hz


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3000), st.sampled_from([8000, 16000, 22050, 44100, 48000]),
       st.sampled_from([8000, 16000, 22050, 44100, 48000]))
def test_resample_length(n, fr, to):
    w = resample(Waveform(np.zeros(n), fr), to)
    assert len(w) == round(n * to / fr) and w.sample_rate == to


# -- STFT / denoise ----------------------------------------------------------------

def test_parseval_padded_stft():
    rng = np.random.default_rng(1)
    window, hop = 1024, 256
    x = rng.standard_normal(hop * 40)
    spec = stft(x, window, hop, pad=True)
    mag2 = np.abs(spec) ** 2
    full = mag2[:, 0] + 2 * mag2[:, 1:-1].sum(axis=1) + mag2[:, -1]
    energy = full.sum() / window / ((hann(window) ** 2).sum() / hop)
    assert abs(energy - np.sum(x ** 2)) / np.sum(x ** 2) < 1e-6


def test_istft_inverts_padded_stft():
    x = np.random.default_rng(2).standard_normal(5000)
    for window, hop in ((512, 128), (2048, 512)):
        np.testing.assert_allclose(istft(stft(x, window, hop, pad=True), window, hop, len(x)), x, atol=1e-10)


def test_stft_frame_count():
    assert stft_frames(1024, 1024, 256) == 1
    assert stft_frames(2047, 1024, 256) == 4
    assert stft(np.zeros(3000), 1024, 256).shape == (stft_frames(3000, 1024, 256), 513)


def test_noise_profile_zero():
    p = estimate_noise_profile(Waveform(np.zeros(8192), 8000))
    assert p.mean.shape == (1025,) and not np.any(p.mean) and not np.any(p.std)


def test_noise_profile_white_flat():
    x = np.random.default_rng(3).standard_normal(512 * 99 + 2048) * 0.1
    p = estimate_noise_profile(Waveform(x, 8000))
    inner = p.mean[1:-1]
    assert inner.max() / inner.min() < 3
    assert np.all(p.mean >= 0) and np.all(p.std >= 0)


def test_noise_profile_sine_bin():
    window = 2048
    k = 100
    n = np.arange(window * 10)
    p = estimate_noise_profile(Waveform(0.5 * np.sin(2 * np.pi * k * n / window), 8000), window)
    assert abs(int(np.argmax(p.mean)) - k) <= 1


def test_noise_profile_too_short():
    with pytest.raises(AudioError):
        estimate_noise_profile(Waveform(np.zeros(100), 8000))


def _noise(seed, n):
    return np.random.default_rng(seed).standard_normal(n) * 0.05


def test_denoise_silence():
    prof = estimate_noise_profile(Waveform(_noise(4, 40000), 8000))
    out = denoise(Waveform(np.zeros(10000), 8000), prof)
    assert len(out) == 10000 and not np.any(np.abs(out.samples) > 1e-12)


def test_denoise_noise_reduction():
    prof = estimate_noise_profile(Waveform(_noise(4, 80000), 8000))
    x = _noise(5, 80000)
    out = denoise(Waveform(x, 8000), prof, reduction_db=12)
    drop = 10 * math.log10(np.sum(x ** 2) / np.sum(out.samples ** 2))
    assert drop >= 12 - 3
    assert len(out) == len(x)


def test_denoise_preserves_loud_sine():
    sr, n = 8000, 80000
    prof = estimate_noise_profile(Waveform(_noise(4, 80000), sr))
    t = np.arange(n) / sr
    sine = 0.8 * np.sin(2 * np.pi * 1000 * t)
    x = sine + _noise(6, n)
    out = denoise(Waveform(x, sr), prof)
    k = int(1000 * n / sr)
    a = np.abs(np.fft.rfft(x))[k]
    b = np.abs(np.fft.rfft(out.samples))[k]
    assert abs(20 * math.log10(b / a)) < 1.0


def test_denoise_profile_mismatch():
    prof = estimate_noise_profile(Waveform(_noise(4, 8000), 8000))
    prof.mean = prof.mean[:10]
    with pytest.raises(AudioError):
        denoise(Waveform(_noise(1, 8000), 8000), prof)


# -- chunking -----------------------------------------------------------------------

SPEC = ChunkSpec()


def test_chunk_spec_hop():
    assert SPEC.hop == 33120
    with pytest.raises(AudioError):
        ChunkSpec(100, 1.0)
    with pytest.raises(AudioError):
        ChunkSpec(0)


def test_chunk_single_frame():
    x = np.arange(44160, dtype=float)
    fr = chunk(x, SPEC)
    assert len(fr) == 1
    np.testing.assert_array_equal(fr[0], x)


def test_chunk_77280_two_frames():
    fr = chunk(np.ones(77280), SPEC)
    assert len(fr) == 2 and np.all(fr[1] == 1.0)


def test_chunk_50000_padding():
    fr = chunk(np.ones(50000), SPEC)
    assert len(fr) == 2
    assert np.count_nonzero(fr[1] == 0) == 27280
    assert np.all(fr[1][:50000 - 33120] == 1)


def test_chunk_empty():
    assert chunk(np.zeros(0), SPEC) == []
    assert chunk_count(0, SPEC) == 0


def test_overlap_add_single_frame():
    f = np.random.default_rng(0).standard_normal(44160)
    np.testing.assert_array_equal(overlap_add([f], SPEC, 44160).samples, f)


def test_overlap_add_constant_coverage():
    out = overlap_add(chunk(np.ones(77280), SPEC), SPEC, 77280).samples
    np.testing.assert_allclose(out, 1.0, atol=1e-12)


def test_overlap_add_bad_frames():
    with pytest.raises(AudioError):
        overlap_add([np.zeros(44160), np.zeros(10)], SPEC, 50000)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3000), st.integers(1, 400), st.floats(0, 0.9), st.integers(0, 2**31 - 1))
def test_chunk_roundtrip_property(n, length, overlap, seed):
    assume(round(length * (1 - overlap)) >= 1)
    spec = ChunkSpec(length, overlap)
    x = np.random.default_rng(seed).uniform(-1, 1, n)
    fr = chunk(x, spec)
    assert len(fr) == max(1, math.ceil((n - length) / spec.hop) + 1)
    assert all(len(f) == length for f in fr)
    for i, f in enumerate(fr):
        seg = x[i * spec.hop:i * spec.hop + length]
        np.testing.assert_array_equal(f[:len(seg)], seg)
    assert np.max(np.abs(overlap_add(fr, spec, n).samples - x)) < 1e-6


# -- spectrogram --------------------------------------------------------------------------

def test_spectrogram_zero_is_floor():
    s = spectrogram(Waveform(np.zeros(4096), 8000))
    assert np.all(s.db == -120.0)


def test_spectrogram_impulse_flat():
    x = np.zeros(1024)
    x[512] = 1.0
    s = spectrogram(Waveform(x, 8000))
    row = s.db[0]
    assert np.max(row) - np.min(row) < 1e-6
    # |DFT| of an impulse at the window center is the window value there
    ref = hann(1024).sum() / 2
    assert abs(row[0] - 20 * math.log10(hann(1024)[512] / ref)) < 1e-9


def test_spectrogram_sine_energy_in_bin():
    k = 64
    n = np.arange(1024 * 4)
    s = spectrogram(Waveform(np.sin(2 * np.pi * k * n / 1024), 8000))
    mag2 = 10 ** (s.db[0] / 10)
    assert mag2[k - 1:k + 2].sum() / mag2.sum() >= 0.99
    assert abs(s.db[0, k]) < 0.01  # full-scale sine on a bin centre reads 0 dBFS


def test_spectrogram_floor_and_too_short():
    s = spectrogram(Waveform(np.random.default_rng(0).standard_normal(3000) * 1e-9, 8000), floor_db=-60)
    assert np.all(s.db >= -60)
    with pytest.raises(AudioError):
        spectrogram(Waveform(np.zeros(100), 8000))


def test_pgm_layout():
    s = spectrogram(Waveform(np.zeros(2048), 8000), window=256, hop=128)
    blob = spectrogram_to_pgm(s)
    frames = stft_frames(2048, 256, 128)
    header = f"P5\n{frames} 129\n255\n".encode()
    assert blob.startswith(header)
    assert blob[len(header):] == bytes(frames * 129)


def test_pgm_high_frequency_on_top():
    n = np.arange(4096)
    s = spectrogram(Waveform(np.sin(2 * np.pi * 120 * n / 256), 8000), window=256, hop=128)
    blob = spectrogram_to_pgm(s)
    frames = s.db.shape[0]
    img = np.frombuffer(blob[-frames * 129:], np.uint8).reshape(129, frames)
    assert int(np.argmax(img[:, 3])) == 128 - 120


def test_csv_rows():
    s = spectrogram(Waveform(np.zeros(3000), 8000), window=512, hop=128)
    rows = spectrogram_to_csv(s).strip().split("\n")
    assert len(rows) == stft_frames(3000, 512, 128)
    assert len(rows[0].split(",")) == 257
