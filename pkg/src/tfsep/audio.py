"""Mono WAV input/output and synthetic mixture generation.

The generator produces mixtures whose sources have controllable,
optionally disjoint spectral content (harmonic tones or band-limited
noise), so separation quality can be verified at desk scale without any
licensed corpus. PCM16 at 8 kHz mono is the canonical on-disk format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.io.wavfile

PEAK_TARGET = 0.9
PCM16_SCALE = 32768.0


@dataclass
class Waveform:
    """Time-domain signal. Samples are float64, nominally within [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = 8000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self):
        return len(self.samples)


@dataclass
class MixtureTriple:
    """A mixture with its clean per-source references."""

    mixture: Waveform
    sources: list
    id: str

    def __post_init__(self):
        lengths = {len(self.mixture)} | {len(s) for s in self.sources}
        rates = {self.mixture.sample_rate} | {s.sample_rate for s in self.sources}
        if len(lengths) != 1:
            raise ValueError(f"mixture/source length mismatch: {sorted(lengths)}")
        if len(rates) != 1:
            raise ValueError(f"mixture/source sample-rate mismatch: {sorted(rates)}")


@dataclass
class SynthSpec:
    """Declarative description of a synthetic mixture.

    mode "harmonic": every source needs {"f0": hertz}; partials at k*f0
    with 1/k amplitudes and random phases.
    mode "bandnoise": every source needs {"band": [lo_hz, hi_hz]};
    white noise bandpassed to that range.
    separable=True additionally requires non-overlapping dominant
    content: distinct fundamentals, or pairwise disjoint bands.
    """

    num_sources: int
    duration_s: float
    sample_rate: int = 8000
    mode: str = "harmonic"
    sources: list = field(default_factory=list)
    separable: bool = True

    def __post_init__(self):
        if self.num_sources < 1:
            raise ValueError(f"num_sources must be >= 1, got {self.num_sources}")
        if self.duration_s <= 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.mode not in ("harmonic", "bandnoise"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if len(self.sources) != self.num_sources:
            raise ValueError(
                f"expected {self.num_sources} source param dicts, got {len(self.sources)}"
            )
        nyquist = self.sample_rate / 2.0
        if self.mode == "harmonic":
            f0s = []
            for i, p in enumerate(self.sources):
                if "f0" not in p or not 0 < p["f0"] < nyquist:
                    raise ValueError(f"source {i}: needs 0 < f0 < nyquist")
                f0s.append(float(p["f0"]))
            if self.separable and len(set(f0s)) != len(f0s):
                raise ValueError("separable harmonic spec needs distinct fundamentals")
        else:
            bands = []
            for i, p in enumerate(self.sources):
                band = p.get("band")
                if not band or len(band) != 2 or not 0 < band[0] < band[1] <= nyquist:
                    raise ValueError(f"source {i}: band must satisfy 0 < lo < hi <= nyquist")
                bands.append((float(band[0]), float(band[1])))
            if self.separable:
                for i in range(len(bands)):
                    for j in range(i + 1, len(bands)):
                        if bands[i][0] < bands[j][1] and bands[j][0] < bands[i][1]:
                            raise ValueError(
                                f"separable bandnoise spec needs disjoint bands, "
                                f"sources {i} and {j} overlap"
                            )

    @classmethod
    def from_dict(cls, d):
        known = {"num_sources", "duration_s", "sample_rate", "mode", "sources", "separable"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SynthSpec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def read_wav(path):
    """Read a mono PCM16 or IEEE float32 WAV as a Waveform.

    PCM16 samples are scaled by 1/32768, so -32768 maps to -1.0 exactly.
    Multichannel files are rejected rather than downmixed.
    """
    rate, data = scipy.io.wavfile.read(path)
    if data.ndim != 1:
        channels = data.shape[1] if data.ndim == 2 else data.ndim
        raise ValueError(f"{path}: expected mono, got {channels}-channel data")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV encoding {data.dtype}")
    return Waveform(samples, int(rate))


def write_wav(path, waveform):
    """Write a Waveform as mono PCM16.

    Samples are clipped to [-1, 1] and rounded; the round trip error is
    at most 2**-15 per sample.
    """
    x = np.clip(waveform.samples, -1.0, 1.0)
    q = np.clip(np.round(x * PCM16_SCALE), -32768, 32767).astype(np.int16)
    scipy.io.wavfile.write(path, waveform.sample_rate, q)


def synth_mixture(spec, rng_seed, id=None):
    """Generate one MixtureTriple from a SynthSpec, deterministically.

    Sources are RMS-equalized, summed, and the whole triple is scaled by
    a single factor so the loudest signal peaks at 0.9. Using one factor
    keeps mixture == sum(sources) exact after normalization.
    """
    rng = np.random.default_rng(rng_seed)
    n = int(round(spec.duration_s * spec.sample_rate))
    raw = []
    for params in spec.sources:
        if spec.mode == "harmonic":
            raw.append(_harmonic_tone(n, spec.sample_rate, float(params["f0"]), rng))
        else:
            lo, hi = params["band"]
            raw.append(_band_noise(n, spec.sample_rate, float(lo), float(hi), rng))
    sources = []
    for x in raw:
        rms = np.sqrt(np.mean(x * x)) if n else 0.0
        sources.append(x / rms if rms > 0 else x)
    mixture = np.sum(sources, axis=0) if sources else np.zeros(n)
    peak = max([np.max(np.abs(mixture), initial=0.0)]
               + [np.max(np.abs(s), initial=0.0) for s in sources])
    scale = PEAK_TARGET / peak if peak > 0 else 1.0
    triple_id = id if id is not None else f"synth-{rng_seed}"
    return MixtureTriple(
        mixture=Waveform(mixture * scale, spec.sample_rate),
        sources=[Waveform(s * scale, spec.sample_rate) for s in sources],
        id=triple_id,
    )


def _harmonic_tone(n, rate, f0, rng):
    t = np.arange(n) / rate
    x = np.zeros(n)
    k = 1
    while k * f0 < 0.45 * rate and k <= 20:
        phase = rng.uniform(0.0, 2.0 * np.pi)
        x += (1.0 / k) * np.sin(2.0 * np.pi * k * f0 * t + phase)
        k += 1
    return x


def _band_noise(n, rate, lo, hi, rng):
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    spectrum[(freqs < lo) | (freqs > hi)] = 0.0
    return np.fft.irfft(spectrum, n=n)
