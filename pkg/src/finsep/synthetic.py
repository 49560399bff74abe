"""Synthetic stand-ins for fish calls and sea background, for tests and demos.

Fish calls are trains of short harmonic pulses in the low hundreds of Hz;
the background is 1/f-shaped noise with sparse broadband clicks.
"""

from __future__ import annotations

import numpy as np

from .audio import Waveform, peak_normalize


def fish_call(rng: np.random.Generator, n: int, sample_rate: int) -> np.ndarray:
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(120.0, 400.0)
    pulse_len = int(rng.uniform(0.03, 0.08) * sample_rate)
    period = int(rng.uniform(0.08, 0.2) * sample_rate)
    tone = sum(np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi)) / h for h in (1, 2, 3))
    env = np.zeros(n)
    start = int(rng.integers(0, max(1, period)))
    while start < n:
        stop = min(n, start + pulse_len)
        env[start:stop] = np.hanning(pulse_len)[:stop - start]
        start += period
    x = tone * env
    if not np.any(x):
        x = tone
    return peak_normalize(Waveform(x, sample_rate)).samples


def sea_background(rng: np.random.Generator, n: int, sample_rate: int, clicks_per_s: float = 20.0) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec /= np.sqrt(np.maximum(f, 50.0))
    x = np.fft.irfft(spec, n)
    x /= np.std(x) + 1e-12
    n_clicks = rng.poisson(clicks_per_s * n / sample_rate)
    for pos in rng.integers(0, n, size=n_clicks):
        width = 16
        seg = rng.standard_normal(min(width, n - pos)) * np.exp(-np.arange(min(width, n - pos)) / 3.0)
        x[pos:pos + len(seg)] += 4.0 * seg
    return peak_normalize(Waveform(x, sample_rate), -6.0).samples
