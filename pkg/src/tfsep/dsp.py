"""STFT analysis/synthesis, log-magnitude features, voice-activity weights.

Analysis and synthesis both use a periodic square-root Hann taper; their
product satisfies constant overlap-add at hop = window/4, and synthesis
divides by the accumulated window product, so unmodified spectrograms
reconstruct exactly on the interior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import Waveform

DEFAULT_FLOOR_DB = -80.0
DEFAULT_DB_THRESHOLD = -20.0


def sqrt_hann(size):
    """Square root of the periodic Hann window."""
    n = np.arange(size)
    return np.sqrt(0.5 * (1.0 - np.cos(2.0 * np.pi * n / size)))


_WINDOWS = {"sqrt_hann": sqrt_hann}


@dataclass(frozen=True)
class StftConfig:
    window_size: int = 256
    hop_size: int = 64
    window: str = "sqrt_hann"

    def __post_init__(self):
        w, h = self.window_size, self.hop_size
        if w <= 0 or (w & (w - 1)) != 0:
            raise ValueError(f"window_size must be a positive power of two, got {w}")
        if not 0 < h <= w:
            raise ValueError(f"hop_size must satisfy 0 < hop <= window, got {h}")
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def num_bins(self):
        return self.window_size // 2 + 1

    def taper(self):
        return _WINDOWS[self.window](self.window_size)


@dataclass
class Spectrogram:
    """Single-utterance complex STFT stored as magnitude + phase (T x F)."""

    magnitude: np.ndarray
    phase: np.ndarray
    config: StftConfig
    sample_rate: int = 8000

    def __post_init__(self):
        self.magnitude = np.asarray(self.magnitude, dtype=np.float64)
        self.phase = np.asarray(self.phase, dtype=np.float64)
        if self.magnitude.shape != self.phase.shape:
            raise ValueError("magnitude/phase shape mismatch")
        if self.magnitude.ndim != 2 or self.magnitude.shape[1] != self.config.num_bins:
            raise ValueError(
                f"expected (T, {self.config.num_bins}) arrays, got {self.magnitude.shape}"
            )

    @property
    def num_frames(self):
        return self.magnitude.shape[0]

    def complex_values(self):
        return self.magnitude * np.exp(1j * self.phase)


@dataclass
class SpectrogramBatch:
    """Batched magnitudes and phases, (B, T, F)."""

    magnitude: np.ndarray
    phase: np.ndarray
    config: StftConfig

    @classmethod
    def from_spectrograms(cls, specs):
        if not specs:
            raise ValueError("empty spectrogram list")
        return cls(
            magnitude=np.stack([s.magnitude for s in specs]),
            phase=np.stack([s.phase for s in specs]),
            config=specs[0].config,
        )


@dataclass
class VAWeights:
    """Binary voice-activity weights, same shape as the source magnitudes."""

    w: np.ndarray
    beta: float = DEFAULT_DB_THRESHOLD


def num_frames(num_samples, config):
    """Frames that fit fully inside the signal, floor((len - W)/H) + 1."""
    if num_samples < config.window_size:
        return 0
    return (num_samples - config.window_size) // config.hop_size + 1


def stft(waveform, config=StftConfig()):
    """Forward STFT of a mono waveform; frames fully inside, no padding."""
    x = waveform.samples if isinstance(waveform, Waveform) else np.asarray(waveform, dtype=np.float64)
    rate = waveform.sample_rate if isinstance(waveform, Waveform) else 8000
    w, h = config.window_size, config.hop_size
    if len(x) < w:
        raise ValueError(f"waveform of {len(x)} samples is shorter than one window ({w})")
    t = num_frames(len(x), config)
    idx = np.arange(w)[None, :] + h * np.arange(t)[:, None]
    frames = x[idx] * config.taper()[None, :]
    spectrum = np.fft.rfft(frames, axis=1)
    phase = np.angle(spectrum)
    phase[phase == -np.pi] = np.pi
    return Spectrogram(np.abs(spectrum), phase, config, rate)


def istft(spectrogram, config=None):
    """Weighted overlap-add synthesis with window-product normalization.

    Output length is the covered span window + (T-1)*hop. For unmodified
    spectrograms the interior reconstruction is exact to roundoff.
    """
    cfg = config if config is not None else spectrogram.config
    if spectrogram.magnitude.shape[1] != cfg.num_bins:
        raise ValueError(
            f"spectrogram has {spectrogram.magnitude.shape[1]} bins, "
            f"config expects {cfg.num_bins}"
        )
    w, h = cfg.window_size, cfg.hop_size
    t = spectrogram.num_frames
    taper = cfg.taper()
    frames = np.fft.irfft(spectrogram.complex_values(), n=w, axis=1) * taper[None, :]
    out = np.zeros(w + (t - 1) * h)
    wsum = np.zeros_like(out)
    wsq = taper * taper
    for i in range(t):
        out[i * h : i * h + w] += frames[i]
        wsum[i * h : i * h + w] += wsq
    nonzero = wsum > 1e-10
    out[nonzero] /= wsum[nonzero]
    out[~nonzero] = 0.0
    return Waveform(out, spectrogram.sample_rate)


def log_magnitude(magnitude, floor_db=DEFAULT_FLOOR_DB):
    """20*log10(max(magnitude, floor)); the floor keeps silence finite."""
    mag = magnitude.magnitude if isinstance(magnitude, Spectrogram) else np.asarray(magnitude)
    if np.any(mag < 0):
        raise ValueError("magnitudes must be non-negative")
    floor = 10.0 ** (floor_db / 20.0)
    return 20.0 * np.log10(np.maximum(mag, floor))


def va_weights(clean_mags, beta=DEFAULT_DB_THRESHOLD):
    """Binary weights marking bins where at least one source is active.

    A bin is active for source k when its energy is within beta dB of
    that source's loudest bin in the utterance:
    10*log10(|s_k,i|^2 / max_j |s_k,j|^2) > beta. An all-zero source's
    ratio is -inf everywhere, so it never activates a bin. For (B, T, F)
    inputs the per-source maximum is taken per batch item.
    """
    if not clean_mags:
        raise ValueError("va_weights needs at least one source magnitude")
    mags = [np.asarray(m, dtype=np.float64) for m in clean_mags]
    shape = mags[0].shape
    if any(m.shape != shape for m in mags):
        raise ValueError("all source magnitudes must share a shape")
    per_item_axes = tuple(range(1, len(shape))) if len(shape) == 3 else None
    active = np.zeros(shape, dtype=bool)
    for mag in mags:
        peak = mag.max(axis=per_item_axes, keepdims=per_item_axes is not None)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = 20.0 * np.log10(mag / peak)
        ratio = np.nan_to_num(ratio, nan=-np.inf, neginf=-np.inf)
        active |= ratio > beta
    return VAWeights(active.astype(np.float64), beta)
