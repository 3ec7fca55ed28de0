"""Inference: model outputs to separated waveforms.

Mask-head models multiply their estimated masks with the mixture
magnitude and resynthesize with the mixture phase. Embedding models are
served by k-means over the voice-active T-F bins; silent bins fall into
cluster 0. Long utterances run chunk-by-chunk with masks concatenated
over time, so estimates cover exactly the STFT span of the mixture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from . import tensor as T
from .audio import Waveform
from .data import dominant_speaker_labels
from .seeding import stream_rng

ORACLE_KINDS = ("IBM", "IRM", "PSM")


@dataclass
class SeparationResult:
    estimates: list  # S Waveforms, all the length of the trimmed mixture
    diagnostics: dict


def separate_with_masks(mixture, model, options):
    """Separate by mask estimation; model must expose a mask head."""
    if not getattr(model, "has_mask_head", False):
        raise ValueError("model lacks a mask head; use separate_with_clustering")
    spec = dsp.stft(mixture, options.stft_config())
    masks = _infer_masks(model, spec, options)
    estimates = apply_masks(spec, masks)
    return SeparationResult(estimates, {"method": "mask", "masks": masks})


def separate_with_clustering(mixture, model, options, k=None):
    """Separate a mixture with an embedding model plus k-means.

    Embeddings of voice-active bins (activity judged on the mixture
    magnitude itself with the configured dB threshold) are clustered
    into k groups; binary masks follow the assignment, with silent bins
    granted to cluster 0.
    """
    if not getattr(model, "has_embedding_head", False):
        raise ValueError("model lacks an embedding head; use separate_with_masks")
    if k is None:
        k = model.config.num_speakers
    spec = dsp.stft(mixture, options.stft_config())
    frames, bins = spec.magnitude.shape
    embeddings = _infer_embeddings(model, spec, options)  # (T*F, D)
    active = dsp.va_weights([spec.magnitude], options.db_threshold).w.reshape(-1) > 0
    if active.sum() < k:
        raise ValueError(f"only {int(active.sum())} voice-active bins for k={k} clusters")
    labels_active, _, inertia = kmeans(embeddings[active], k,
                                       stream_rng(0, "kmeans"))
    assignment = np.zeros(frames * bins, dtype=int)
    assignment[active] = labels_active
    masks = np.eye(k)[assignment].reshape(frames, bins, k)
    estimates = apply_masks(spec, masks)
    return SeparationResult(estimates, {
        "method": "clustering", "assignments": assignment, "inertia": inertia,
        "masks": masks,
    })


def apply_masks(spec, masks):
    """Per-source iSTFT of mask * |X| under the mixture phase."""
    if masks.shape[:2] != spec.magnitude.shape:
        raise ValueError(f"masks {masks.shape} do not match spectrogram "
                         f"{spec.magnitude.shape}")
    estimates = []
    for c in range(masks.shape[2]):
        est_spec = dsp.Spectrogram(masks[:, :, c] * spec.magnitude, spec.phase,
                                   spec.config, spec.sample_rate)
        estimates.append(dsp.istft(est_spec))
    return estimates


def trim_to_coverage(waveform, options):
    """Cut a waveform to the span the STFT frames actually cover."""
    cfg = options.stft_config()
    frames = dsp.num_frames(len(waveform.samples), cfg)
    covered = cfg.window_size + (frames - 1) * cfg.hop_size
    return Waveform(waveform.samples[:covered], waveform.sample_rate)


def _iter_chunks(total_frames, frame_length):
    # full chunks plus the trailing remainder; inference never drops frames
    start = 0
    while start < total_frames:
        yield start, min(start + frame_length, total_frames)
        start += frame_length


def _infer_masks(model, spec, options):
    model.eval()
    num_speakers = model.config.num_speakers
    logmag = dsp.log_magnitude(spec.magnitude)
    pieces = []
    with T.no_grad():
        for lo, hi in _iter_chunks(spec.num_frames, options.frame_length):
            outputs = model([T.Tensor(logmag[None, lo:hi])])
            if len(outputs) == 1:  # stacked (1, T, F, S)
                pieces.append(outputs[0].data[0])
            else:  # [embedding, mask_1, ..]
                pieces.append(np.stack([o.data[0] for o in outputs[1:]], axis=-1))
    masks = np.concatenate(pieces, axis=0)
    assert masks.shape == (spec.num_frames, spec.magnitude.shape[1], num_speakers)
    return masks


def _infer_embeddings(model, spec, options):
    model.eval()
    logmag = dsp.log_magnitude(spec.magnitude)
    pieces = []
    with T.no_grad():
        for lo, hi in _iter_chunks(spec.num_frames, options.frame_length):
            outputs = model([T.Tensor(logmag[None, lo:hi])])
            pieces.append(outputs[0].data[0])  # (chunk_frames * F, D)
    return np.concatenate(pieces, axis=0)


# ---------------------------------------------------------------------
# oracle masks
# ---------------------------------------------------------------------

def oracle_masks(kind, mixture_spec, clean_specs):
    """Ideal masks from clean references (upper-bound baselines).

    IBM: one-hot dominant source per bin. IRM: |S_c| / sum_k |S_k|, with
    all-silent bins split uniformly. PSM: clamp(|S_c| cos(phase_X -
    phase_c) / |X|, 0, 1), zero where the mixture bin is empty.
    """
    if kind not in ORACLE_KINDS:
        raise ValueError(f"unknown oracle mask kind {kind!r}; choose from {ORACLE_KINDS}")
    mags = [s.magnitude for s in clean_specs]
    shape = mixture_spec.magnitude.shape
    if any(m.shape != shape for m in mags):
        raise ValueError("clean reference shapes do not match the mixture")
    num_sources = len(clean_specs)
    if kind == "IBM":
        return dominant_speaker_labels(mags).reshape(shape + (num_sources,))
    if kind == "IRM":
        total = np.sum(mags, axis=0)
        masks = np.empty(shape + (num_sources,))
        with np.errstate(invalid="ignore", divide="ignore"):
            for c, m in enumerate(mags):
                masks[:, :, c] = np.where(total > 0, m / np.where(total > 0, total, 1.0),
                                          1.0 / num_sources)
        return masks
    # PSM
    masks = np.empty(shape + (num_sources,))
    mix_mag = mixture_spec.magnitude
    safe = np.where(mix_mag > 0, mix_mag, 1.0)
    for c, s in enumerate(clean_specs):
        psm = s.magnitude * np.cos(mixture_spec.phase - s.phase) / safe
        masks[:, :, c] = np.where(mix_mag > 0, np.clip(psm, 0.0, 1.0), 0.0)
    return masks


# ---------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------

def kmeans(points, k, rng, restarts=10, max_iter=100, tol=1e-6):
    """Lloyd's algorithm with D^2-weighted seeding and multiple restarts.

    Deterministic for a fixed generator; returns (labels, centers,
    inertia) of the best restart.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < k:
        raise ValueError(f"need at least {k} points for {k} clusters, got {n}")
    best = None
    for _ in range(restarts):
        centers = _seed_centers(points, k, rng)
        inertia = np.inf
        for _ in range(max_iter):
            d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            labels = d2.argmin(axis=1)
            new_inertia = d2[np.arange(n), labels].sum()
            for c in range(k):
                member = labels == c
                if member.any():
                    centers[c] = points[member].mean(axis=0)
                else:  # re-seed an empty cluster at the worst-served point
                    centers[c] = points[d2[np.arange(n), labels].argmax()]
            if inertia - new_inertia <= tol * max(inertia, 1e-12):
                inertia = new_inertia
                break
            inertia = new_inertia
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        inertia = d2[np.arange(n), labels].sum()
        if best is None or inertia < best[2]:
            best = (labels, centers.copy(), inertia)
    return best


def _seed_centers(points, k, rng):
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(
            ((points[:, None, :] - np.asarray(centers)[None, :, :]) ** 2).sum(axis=2),
            axis=1)
        total = d2.sum()
        if total <= 0:  # all points coincide with a chosen center
            centers.append(points[rng.integers(n)])
            continue
        centers.append(points[rng.choice(n, p=d2 / total)])
    return np.asarray(centers, dtype=np.float64)
