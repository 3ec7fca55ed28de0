"""Mask application, clustering inference, oracle masks, k-means."""

import numpy as np
import pytest

from conftest import snr_db
from tfsep import dsp, metrics, separator
from tfsep.audio import SynthSpec, Waveform, synth_mixture
from tfsep.data import FeatureOptions
from tfsep.models import ModelConfig, UPitNet
from tfsep.seeding import stream_rng
from tfsep.separator import (apply_masks, kmeans, oracle_masks,
                             separate_with_clustering, separate_with_masks)
from tfsep.tensor import Tensor

OPTS = FeatureOptions(data_path=".", batch_size=4, frame_length=50)

BN_SPEC = SynthSpec(num_sources=2, duration_s=1.0, sample_rate=8000,
                    mode="bandnoise",
                    sources=[{"band": [200, 800]}, {"band": [1500, 3000]}])


def bandnoise_triple(seed=21):
    return synth_mixture(BN_SPEC, rng_seed=seed)


class FramewiseMaskModel:
    """Stateless stub: masks depend only on the frame's own features."""

    has_mask_head = True
    has_embedding_head = False

    def __init__(self, num_speakers=2):
        self.config = ModelConfig(num_speakers=num_speakers)

    def eval(self):
        return self

    def __call__(self, inputs):
        x = inputs[0].data  # (1, T, F)
        m1 = 1.0 / (1.0 + np.exp(-0.05 * x))
        masks = np.stack([m1, 1.0 - m1], axis=-1)
        return [Tensor(masks)]


class CloudEmbedModel:
    """Stub embedding net keyed purely on the frequency bin index."""

    has_mask_head = False
    has_embedding_head = True

    def __init__(self, bins=129, dim=4):
        self.config = ModelConfig(num_speakers=2, embedding_dim=dim)
        centers = np.zeros((bins, dim))
        centers[: bins // 2, 0] = 1.0
        centers[bins // 2 :, 1] = 1.0
        self.centers = centers

    def eval(self):
        return self

    def __call__(self, inputs):
        x = inputs[0].data
        _, frames, bins = x.shape
        v = np.tile(self.centers[None, :, :], (frames, 1, 1)).reshape(
            1, frames * bins, -1)
        return [Tensor(v)]


# ---------------------------------------------------------------------
# mask application
# ---------------------------------------------------------------------

def test_all_ones_mask_reproduces_the_mixture():
    triple = bandnoise_triple()
    spec = dsp.stft(triple.mixture, OPTS.stft_config())
    (est,) = apply_masks(spec, np.ones(spec.magnitude.shape + (1,)))
    n = len(est.samples)
    interior = slice(256, n - 256)
    assert snr_db(triple.mixture.samples[:n][interior],
                  est.samples[interior]) >= 60.0


def test_masks_summing_to_one_reconstruct_the_mixture():
    triple = bandnoise_triple()
    spec = dsp.stft(triple.mixture, OPTS.stft_config())
    rng = np.random.default_rng(0)
    m1 = rng.uniform(0.0, 1.0, spec.magnitude.shape)
    masks = np.stack([m1, 1.0 - m1], axis=-1)
    e1, e2 = apply_masks(spec, masks)
    mixture_recon = dsp.istft(spec)
    assert np.max(np.abs(e1.samples + e2.samples - mixture_recon.samples)) <= 1e-6


def test_mask_apply_is_linear_in_the_masks():
    triple = bandnoise_triple()
    spec = dsp.stft(triple.mixture, OPTS.stft_config())
    rng = np.random.default_rng(1)
    masks = rng.uniform(0.0, 1.0, spec.magnitude.shape + (2,))
    scaled = 0.25 * masks
    assert np.allclose(scaled[..., 0] * spec.magnitude,
                       0.25 * (masks[..., 0] * spec.magnitude))
    a = apply_masks(spec, masks)
    b = apply_masks(spec, scaled)
    assert np.allclose(b[0].samples, 0.25 * a[0].samples, atol=1e-12)


def test_apply_masks_shape_mismatch():
    spec = dsp.stft(Waveform(np.zeros(1000)), OPTS.stft_config())
    with pytest.raises(ValueError, match="masks"):
        apply_masks(spec, np.ones((3, 3, 2)))


def test_oracle_irm_separation_beats_baseline():
    triple = bandnoise_triple()
    spec = dsp.stft(triple.mixture, OPTS.stft_config())
    refs = [dsp.stft(s, OPTS.stft_config()) for s in triple.sources]
    ests = apply_masks(spec, oracle_masks("IRM", spec, refs))
    n = len(ests[0].samples)
    pairing = metrics.eval_pairing([e.samples for e in ests],
                                   [s.samples[:n] for s in triple.sources])
    assert pairing.mean_sdr >= 40.0  # regression floor from the recorded oracle run


def test_separate_with_masks_requires_mask_head():
    with pytest.raises(ValueError, match="mask head"):
        separate_with_masks(bandnoise_triple().mixture, CloudEmbedModel(), OPTS)


def test_separate_with_clustering_requires_embedding_head():
    with pytest.raises(ValueError, match="embedding head"):
        separate_with_clustering(bandnoise_triple().mixture,
                                 FramewiseMaskModel(), OPTS)


def test_chunked_inference_matches_single_pass_for_stateless_model():
    triple = bandnoise_triple()
    model = FramewiseMaskModel()
    chunked = separate_with_masks(triple.mixture, model, OPTS)
    whole = separate_with_masks(
        triple.mixture, model,
        FeatureOptions(data_path=".", frame_length=10_000))
    assert np.array_equal(chunked.diagnostics["masks"], whole.diagnostics["masks"])
    for a, b in zip(chunked.estimates, whole.estimates):
        assert np.array_equal(a.samples, b.samples)


def test_estimates_share_the_trimmed_mixture_length():
    triple = bandnoise_triple()
    result = separate_with_masks(triple.mixture, FramewiseMaskModel(), OPTS)
    trimmed = separator.trim_to_coverage(triple.mixture, OPTS)
    assert all(len(e) == len(trimmed) for e in result.estimates)


def test_real_upit_model_separates_without_error():
    cfg = ModelConfig(input_dim=129, output_dim=129, hidden_dim=4, num_layers=1,
                      dropout=0.0, num_speakers=2)
    model = UPitNet(cfg, seed=0)
    result = separate_with_masks(bandnoise_triple().mixture, model, OPTS)
    assert len(result.estimates) == 2
    assert result.diagnostics["method"] == "mask"


# ---------------------------------------------------------------------
# clustering inference
# ---------------------------------------------------------------------

def test_clustering_recovers_the_frequency_partition():
    triple = bandnoise_triple()
    model = CloudEmbedModel()
    result = separate_with_clustering(triple.mixture, model, OPTS)
    masks = result.diagnostics["masks"]
    frames, bins = masks.shape[:2]
    active = dsp.va_weights([dsp.stft(triple.mixture, OPTS.stft_config()).magnitude],
                            OPTS.db_threshold).w.astype(bool)
    low = masks[:, : bins // 2, :][active[:, : bins // 2]]
    high = masks[:, bins // 2 :, :][active[:, bins // 2 :]]
    # every active low bin in one cluster, every active high bin in the other
    assert len(set(map(tuple, low))) == 1
    assert len(set(map(tuple, high))) == 1
    assert tuple(low[0]) != tuple(high[0])


def test_clustering_k1_gives_single_full_mask():
    triple = bandnoise_triple()
    result = separate_with_clustering(triple.mixture, CloudEmbedModel(), OPTS, k=1)
    assert len(result.estimates) == 1
    assert np.array_equal(result.diagnostics["masks"][..., 0],
                          np.ones_like(result.diagnostics["masks"][..., 0]))


def test_clustering_deterministic():
    triple = bandnoise_triple()
    model = CloudEmbedModel()
    a = separate_with_clustering(triple.mixture, model, OPTS)
    b = separate_with_clustering(triple.mixture, model, OPTS)
    assert np.array_equal(a.diagnostics["assignments"], b.diagnostics["assignments"])


def test_clustering_needs_enough_active_bins():
    quiet = Waveform(np.full(1000, 1e-6))
    spec_ = SynthSpec(num_sources=1, duration_s=0.2, mode="harmonic",
                      sources=[{"f0": 440.0}])
    model = CloudEmbedModel()
    # a pure tone has very few active bins; k larger than that must fail
    tone = synth_mixture(spec_, rng_seed=0).mixture
    with pytest.raises(ValueError, match="voice-active"):
        separate_with_clustering(tone, model, OPTS, k=2000)


# ---------------------------------------------------------------------
# oracle masks
# ---------------------------------------------------------------------

def test_ibm_partitions_disjoint_bands_exactly():
    triple = bandnoise_triple()
    cfg = OPTS.stft_config()
    spec = dsp.stft(triple.mixture, cfg)
    refs = [dsp.stft(s, cfg) for s in triple.sources]
    ibm = oracle_masks("IBM", spec, refs)
    assert set(np.unique(ibm)) <= {0.0, 1.0}
    assert np.array_equal(ibm.sum(axis=2), np.ones(spec.magnitude.shape))
    # dominance agrees with the larger reference magnitude wherever distinct
    m0, m1 = refs[0].magnitude, refs[1].magnitude
    distinct = m0 != m1
    assert np.array_equal(ibm[..., 0][distinct] == 1.0, (m0 > m1)[distinct])


def test_irm_equal_sources_is_uniform():
    spec = dsp.stft(Waveform(np.random.default_rng(2).uniform(-0.5, 0.5, 2000)),
                    OPTS.stft_config())
    irm = oracle_masks("IRM", spec, [spec, spec])
    assert np.allclose(irm, 0.5)


def test_irm_silent_bins_fall_back_to_uniform():
    silent = dsp.stft(Waveform(np.zeros(1000)), OPTS.stft_config())
    irm = oracle_masks("IRM", silent, [silent, silent])
    assert np.allclose(irm, 0.5)


def test_psm_single_active_source_with_aligned_phase():
    triple = bandnoise_triple()
    cfg = OPTS.stft_config()
    src = dsp.stft(triple.sources[0], cfg)
    psm = oracle_masks("PSM", src, [src])  # mixture == the source itself
    expected = np.where(src.magnitude > 0,
                        np.minimum(src.magnitude / np.where(src.magnitude > 0,
                                                            src.magnitude, 1.0), 1.0),
                        0.0)
    assert np.allclose(psm[..., 0], expected)


def test_oracle_masks_validation():
    cfg = OPTS.stft_config()
    spec = dsp.stft(Waveform(np.zeros(1000)), cfg)
    small = dsp.stft(Waveform(np.zeros(512)), cfg)
    with pytest.raises(ValueError, match="unknown oracle"):
        oracle_masks("WF", spec, [spec])
    with pytest.raises(ValueError, match="shapes"):
        oracle_masks("IBM", spec, [small])


# ---------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------

def clouds(rng, n=60, dim=3, spread=0.05):
    a = rng.normal(scale=spread, size=(n, dim)) + np.array([1.0] + [0.0] * (dim - 1))
    b = rng.normal(scale=spread, size=(n, dim)) + np.array([0.0, 1.0] + [0.0] * (dim - 2))
    return np.vstack([a, b])


def test_kmeans_separates_two_clouds():
    rng = np.random.default_rng(3)
    points = clouds(rng)
    labels, centers, inertia = kmeans(points, 2, stream_rng(0, "kmeans"))
    assert len(set(labels[:60])) == 1
    assert len(set(labels[60:])) == 1
    assert labels[0] != labels[60]


def test_kmeans_deterministic_given_stream():
    points = clouds(np.random.default_rng(4))
    a = kmeans(points, 2, stream_rng(5, "kmeans"))
    b = kmeans(points, 2, stream_rng(5, "kmeans"))
    assert np.array_equal(a[0], b[0])
    assert a[2] == b[2]


def test_kmeans_partition_invariant_under_rotation():
    points = clouds(np.random.default_rng(5))
    q, _ = np.linalg.qr(np.random.default_rng(6).normal(size=(3, 3)))
    la = kmeans(points, 2, stream_rng(7, "kmeans"))[0]
    lb = kmeans(points @ q, 2, stream_rng(7, "kmeans"))[0]
    same = np.array_equal(la, lb)
    flipped = np.array_equal(la, 1 - lb)
    assert same or flipped


def test_kmeans_needs_enough_points():
    with pytest.raises(ValueError, match="at least"):
        kmeans(np.zeros((1, 2)), 2, stream_rng(0, "kmeans"))
