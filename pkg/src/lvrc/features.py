"""Framing and log mel spectrum extraction.

Frames are centered on the hop grid: the signal is reflect-padded by half
a window at each edge, so frame t covers samples centered at t*hop and a
signal of length L yields floor(L/hop) + 1 frames (empty if L is shorter
than one window). Mel energies use triangular filters on the mel scale,
each normalized to unit weight sum, and are floored before the natural log.
"""

from __future__ import annotations

import numpy as np
from scipy.signal.windows import hann

from .audio import AudioBuffer
from .config import FeatureConfig
from .errors import ConfigError


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, fft_size//2 + 1)."""
    n_fft = cfg.resolved_fft_size()
    n_freqs = n_fft // 2 + 1
    freqs = np.linspace(0.0, cfg.sample_rate / 2.0, n_freqs)

    mel_pts = np.linspace(hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.resolved_fmax()), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)

    fb = np.zeros((cfg.n_mels, n_freqs))
    for m in range(cfg.n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (freqs - lo) / max(ctr - lo, 1e-12)
        falling = (hi - freqs) / max(hi - ctr, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
        total = fb[m].sum()
        if total > 0:
            fb[m] /= total
    return fb


def filter_center_frequencies(cfg: FeatureConfig) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    mel_pts = np.linspace(hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.resolved_fmax()), cfg.n_mels + 2)
    return mel_to_hz(mel_pts[1:-1])


def frame_signal(samples: np.ndarray, window: int, hop: int) -> np.ndarray:
    """Center-aligned frames, shape (n_frames, window). Empty if too short."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) < window:
        return np.zeros((0, window))
    half = window // 2
    padded = np.pad(samples, half, mode="reflect")
    n_frames = (len(padded) - window) // hop + 1
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    return padded[idx]


def log_mel_features(audio: AudioBuffer, cfg: FeatureConfig) -> np.ndarray:
    """Log mel spectra, shape (n_frames, n_mels), natural log of floored energies."""
    if audio.sample_rate != cfg.sample_rate:
        raise ConfigError(
            f"audio rate {audio.sample_rate} != configured rate {cfg.sample_rate}"
        )
    frames = frame_signal(audio.samples, cfg.window_length, cfg.hop_length)
    if len(frames) == 0:
        return np.zeros((0, cfg.n_mels))
    win = hann(cfg.window_length, sym=False)
    spectra = np.fft.rfft(frames * win, n=cfg.resolved_fft_size(), axis=1)
    power = spectra.real**2 + spectra.imag**2
    mel = power @ mel_filterbank(cfg).T
    return np.log(np.maximum(mel, cfg.log_floor))
