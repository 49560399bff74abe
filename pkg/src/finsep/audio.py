"""Audio I/O and signal utilities: WAV, resampling, normalization, spectral
gating, chunking and spectrograms. Everything is mono."""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage, signal


class AudioError(ValueError):
    pass


class WavFormatError(AudioError):
    """Unreadable, truncated or unsupported WAV file."""


class SilentSignalError(AudioError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise AudioError(f"waveform must be mono 1-d, got shape {self.samples.shape}")
        if not np.issubdtype(self.samples.dtype, np.floating):
            self.samples = self.samples.astype(np.float64)
        if int(self.sample_rate) <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class ChunkSpec:
    length: int = 44160
    overlap: float = 0.25

    def __post_init__(self):
        if self.length < 1:
            raise AudioError(f"chunk length must be >= 1, got {self.length}")
        if not 0.0 <= self.overlap < 1.0:
            raise AudioError(f"chunk overlap must be in [0, 1), got {self.overlap}")
        if not 1 <= self.hop <= self.length:
            raise AudioError(f"chunk hop {self.hop} outside [1, {self.length}]")

    @property
    def hop(self) -> int:
        return int(round(self.length * (1.0 - self.overlap)))


@dataclass
class NoiseProfile:
    mean: np.ndarray
    std: np.ndarray
    window: int
    hop: int


@dataclass
class Spectrogram:
    db: np.ndarray  # [frames, bins]
    window: int
    hop: int
    floor_db: float


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------

_PCM, _FLOAT, _EXTENSIBLE = 1, 3, 0xFFFE


def read_wav(path) -> Waveform:
    """Read PCM-16 or float-32 RIFF/WAVE; stereo is averaged to mono.

    Samples come back as float32 (PCM value ``v`` maps to ``v / 32768``).
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: corrupt container (no RIFF/WAVE header)")
    pos, fmt, data = 12, None, None
    while pos + 8 <= len(raw):
        cid, size = raw[pos:pos + 4], struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"{path}: corrupt container (truncated {cid.decode(errors='replace')} chunk)")
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError(f"{path}: corrupt container (short fmt chunk)")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _EXTENSIBLE and size >= 26:
                fmt = (struct.unpack("<H", body[24:26])[0],) + fmt[1:]
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise WavFormatError(f"{path}: corrupt container (missing fmt or data chunk)")
    tag, channels, rate, _, block, bits = fmt
    if tag == _PCM and bits == 16:
        dt, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _FLOAT and bits == 32:
        dt, scale = np.dtype("<f4"), None
    else:
        raise WavFormatError(f"{path}: unsupported format (tag {tag}, {bits} bits)")
    if channels not in (1, 2):
        raise WavFormatError(f"{path}: unsupported format ({channels} channels)")
    if len(data) % (dt.itemsize * channels):
        raise WavFormatError(f"{path}: corrupt container (partial frame in data chunk)")
    x = np.frombuffer(data, dtype=dt).reshape(-1, channels)
    x = x.astype(np.float32)
    if scale is not None:
        x *= np.float32(scale)
    mono = x[:, 0] if channels == 1 else x.mean(axis=1, dtype=np.float32)
    return Waveform(np.ascontiguousarray(mono), rate)


def write_wav(w: Waveform, path, encoding: str = "float32") -> None:
    """Write mono WAV atomically. ``pcm16`` clips to [-1, 32767/32768]."""
    if encoding == "float32":
        tag, bits = _FLOAT, 32
        payload = np.asarray(w.samples, dtype="<f4").tobytes()
    elif encoding == "pcm16":
        tag, bits = _PCM, 16
        q = np.round(np.asarray(w.samples, dtype=np.float64) * 32768.0)
        payload = np.clip(q, -32768, 32767).astype("<i2").tobytes()
    else:
        raise WavFormatError(f"unknown encoding {encoding!r} (expected pcm16 or float32)")
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, w.sample_rate, w.sample_rate * block, block, bits)
    riff = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    blob = b"RIFF" + struct.pack("<I", len(riff)) + riff
    d = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".wav-")
    except OSError as exc:
        raise OSError(exc.errno, exc.strerror, str(path)) from exc
    with os.fdopen(fd, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# level and rate
# ---------------------------------------------------------------------------

def peak_normalize(w: Waveform, target_db: float = -1.0) -> Waveform:
    if len(w) == 0:
        raise AudioError("cannot normalize an empty waveform")
    x = np.asarray(w.samples, dtype=np.float64)
    peak = np.max(np.abs(x))
    if peak == 0.0:
        raise SilentSignalError("silent signal: peak normalization gain is undefined")
    return Waveform(x * (10.0 ** (target_db / 20.0) / peak), w.sample_rate)


def resample(w: Waveform, to_rate: int) -> Waveform:
    """Polyphase windowed-sinc resampling; output length ``round(n * to / from)``."""
    to_rate = int(to_rate)
    if to_rate <= 0:
        raise AudioError(f"target rate must be positive, got {to_rate}")
    if to_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    ratio = Fraction(to_rate, w.sample_rate)
    n_out = int(round(len(w) * to_rate / w.sample_rate))
    x = np.asarray(w.samples, dtype=np.float64)
    if len(x) == 0:
        return Waveform(np.zeros(0), to_rate)
    y = signal.resample_poly(x, ratio.numerator, ratio.denominator)
    if len(y) < n_out:
        y = np.pad(y, (0, n_out - len(y)))
    return Waveform(y[:n_out], to_rate)


# ---------------------------------------------------------------------------
# STFT helpers
# ---------------------------------------------------------------------------

def hann(window: int) -> np.ndarray:
    return signal.get_window("hann", window, fftbins=True)


def stft_frames(length: int, window: int, hop: int) -> int:
    return 1 + (length - window) // hop if length >= window else 0


def stft(x: np.ndarray, window: int, hop: int, pad: bool = False) -> np.ndarray:
    """Hann-windowed one-sided STFT, ``[frames, window//2 + 1]``.

    With ``pad`` the signal gets ``window - hop`` zeros on both sides and is
    extended to a whole number of hops, so every sample is covered by the
    same number of frames.
    """
    x = np.asarray(x, dtype=np.float64)
    if pad:
        x = np.pad(x, (window - hop, window - hop + (-len(x)) % hop))
    n = stft_frames(len(x), window, hop)
    if n == 0:
        raise AudioError(f"signal of {len(x)} samples shorter than window {window}")
    idx = np.arange(window)[None, :] + hop * np.arange(n)[:, None]
    return np.fft.rfft(x[idx] * hann(window), axis=1)


def istft(spec: np.ndarray, window: int, hop: int, length: int) -> np.ndarray:
    """Inverse of ``stft(..., pad=True)`` by window-squared weighted overlap-add."""
    frames = np.fft.irfft(spec, n=window, axis=1) * hann(window)
    total = hop * (len(frames) - 1) + window
    out = np.zeros(total)
    wsum = np.zeros(total)
    w2 = hann(window) ** 2
    for i, f in enumerate(frames):
        out[i * hop:i * hop + window] += f
        wsum[i * hop:i * hop + window] += w2
    start = window - hop
    out = out[start:start + length]
    wsum = wsum[start:start + length]
    return out / np.where(wsum > 1e-12, wsum, 1.0)


# ---------------------------------------------------------------------------
# spectral gating
# ---------------------------------------------------------------------------

def estimate_noise_profile(w: Waveform, window: int = 2048, hop: int = 512) -> NoiseProfile:
    if len(w) < window:
        raise AudioError(f"noise sample of {len(w)} samples is shorter than window {window}")
    mag = np.abs(stft(w.samples, window, hop))
    return NoiseProfile(mag.mean(axis=0), mag.std(axis=0), window, hop)


def denoise(w: Waveform, profile: NoiseProfile, threshold_sigmas: float = 1.5,
            reduction_db: float = 12.0, smooth_frames: int = 3, smooth_bins: int = 3) -> Waveform:
    """Spectral gate against a noise profile.

    A bin stays open when its magnitude, averaged over a small time/frequency
    neighbourhood, reaches ``mean + threshold_sigmas * std`` of the profile;
    closed bins are attenuated by ``reduction_db``. Averaging keeps isolated
    noise peaks from slipping through the gate.
    """
    n = len(w)
    if n == 0:
        return Waveform(np.zeros(0), w.sample_rate)
    win, hop = profile.window, profile.hop
    if len(profile.mean) != win // 2 + 1:
        raise AudioError("noise profile bin count does not match its window")
    spec = stft(w.samples, win, hop, pad=True)
    mag = np.abs(spec)
    smoothed = ndimage.uniform_filter(mag, size=(smooth_frames, smooth_bins), mode="nearest")
    thresh = profile.mean + threshold_sigmas * profile.std
    gain = np.where(smoothed >= thresh[None, :], 1.0, 10.0 ** (-reduction_db / 20.0))
    return Waveform(istft(spec * gain, win, hop, n), w.sample_rate)


# ---------------------------------------------------------------------------
# chunking
# ---------------------------------------------------------------------------

def chunk_count(length: int, spec: ChunkSpec) -> int:
    if length <= 0:
        return 0
    return max(1, math.ceil((length - spec.length) / spec.hop) + 1)


def chunk(w, spec: ChunkSpec) -> list:
    """Fixed-length frames at ``spec.hop``; the last frame is zero-padded."""
    x = np.asarray(w.samples if isinstance(w, Waveform) else w)
    n = chunk_count(len(x), spec)
    need = (n - 1) * spec.hop + spec.length if n else 0
    xp = np.pad(x, (0, max(0, need - len(x))))
    return [xp[i * spec.hop:i * spec.hop + spec.length].copy() for i in range(n)]


def overlap_add(frames, spec: ChunkSpec, original_len: int, sample_rate: int = 1) -> Waveform:
    """Sum frames at ``spec.hop`` and divide by per-sample frame coverage."""
    frames = [np.asarray(f) for f in frames]
    if any(len(f) != spec.length for f in frames):
        raise AudioError(f"all frames must have length {spec.length}")
    if not frames:
        return Waveform(np.zeros(original_len), sample_rate)
    total = (len(frames) - 1) * spec.hop + spec.length
    out = np.zeros(max(total, original_len))
    cover = np.zeros_like(out)
    for i, f in enumerate(frames):
        out[i * spec.hop:i * spec.hop + spec.length] += f
        cover[i * spec.hop:i * spec.hop + spec.length] += 1.0
    out = out / np.maximum(cover, 1.0)
    return Waveform(out[:original_len], sample_rate)


# ---------------------------------------------------------------------------
# spectrogram rendering
# ---------------------------------------------------------------------------

def spectrogram(w: Waveform, window: int = 1024, hop: int = 256, floor_db: float = -120.0) -> Spectrogram:
    """Magnitudes in dBFS: a full-scale sine centred on a bin reads 0 dB."""
    if len(w) < window:
        raise AudioError(f"signal of {len(w)} samples is shorter than window {window}")
    mag = np.abs(stft(w.samples, window, hop))
    ref = hann(window).sum() / 2.0
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag / ref)
    return Spectrogram(np.maximum(db, floor_db), window, hop, floor_db)


def spectrogram_to_pgm(spec: Spectrogram) -> bytes:
    """Binary 8-bit graymap: time runs left to right, highest frequency on top."""
    img = np.clip((spec.db - spec.floor_db) / (-spec.floor_db), 0.0, 1.0) * 255.0
    img = np.round(img).astype(np.uint8).T[::-1]
    h, wdt = img.shape
    return f"P5\n{wdt} {h}\n255\n".encode() + img.tobytes()


def spectrogram_to_csv(spec: Spectrogram) -> str:
    return "\n".join(",".join(f"{v:.6f}" for v in row) for row in spec.db) + "\n"
