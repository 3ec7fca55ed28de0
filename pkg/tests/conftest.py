"""Shared fixtures: frozen corpora, finite differences, oracle pipeline."""

import json
from pathlib import Path

import numpy as np
import pytest

from tfsep import dsp, metrics, separator
from tfsep.audio import SynthSpec, read_wav, synth_mixture, write_wav
from tfsep.data import FeatureOptions, Manifest, ManifestEntry, generate_synthetic_manifest

FROZEN_SEED = 42
FROZEN_COUNT = 20
BASELINE_PATH = Path(__file__).parent / "data" / "oracle_baselines.json"


def pytest_addoption(parser):
    parser.addoption(
        "--regen-oracle-baselines", action="store_true", default=False,
        help="recompute and overwrite tests/data/oracle_baselines.json")


# ---------------------------------------------------------------------
# frozen corpus used by the acceptance suite (80/10/10 chunks at
# frame_length 50: 20 utterances of 2.1 s -> 259 frames -> 5 chunks each)
# ---------------------------------------------------------------------

def frozen_synth_spec():
    return SynthSpec(
        num_sources=2, duration_s=2.1, sample_rate=8000, mode="bandnoise",
        separable=True,
        sources=[{"band": [200, 800]}, {"band": [1500, 3000]}])


def frozen_feature_options(data_path):
    return FeatureOptions(data_path=str(data_path), batch_size=10, frame_length=50,
                          window_size=256, hop_size=64, db_threshold=-20.0)


def toy_train_config_dict(data_path, checkpoint_dir, **overrides):
    cfg = {
        "feature_options": {
            "data_path": str(data_path), "batch_size": 10, "frame_length": 50,
            "window_size": 256, "hop_size": 64, "db_threshold": -20,
        },
        "model": {
            "model_key": "chimera", "hidden_dim": 64, "num_layers": 2,
            "dropout": 0.0, "num_speakers": 2, "embedding_dim": 8,
        },
        "loss": {"loss_key": "chimera_msa", "alpha": 0.975},
        "optimizer": {"lr": 0.001, "clip": [-1.0, 1.0]},
        "max_epochs": 50, "patience": 10, "seed": 42,
        "checkpoint_dir": str(checkpoint_dir),
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture(scope="session")
def frozen_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("frozen_corpus")
    return generate_synthetic_manifest(root, FROZEN_COUNT, frozen_synth_spec(),
                                       seed=FROZEN_SEED)


# ---------------------------------------------------------------------
# tiny corpus for fast trainer tests: 6 utterances of 0.7 s, exactly one
# 80-frame chunk each, splits 4/1/1
# ---------------------------------------------------------------------

@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_corpus")
    spec = SynthSpec(
        num_sources=2, duration_s=0.7, sample_rate=8000, mode="bandnoise",
        sources=[{"band": [200, 800]}, {"band": [1500, 3000]}])
    entries = []
    splits = ["train"] * 4 + ["valid", "test"]
    for i, split in enumerate(splits):
        triple = synth_mixture(spec, rng_seed=[11, i], id=f"utt{i:04d}")
        write_wav(root / f"{triple.id}_mix.wav", triple.mixture)
        names = []
        for k, src in enumerate(triple.sources, start=1):
            write_wav(root / f"{triple.id}_s{k}.wav", src)
            names.append(f"{triple.id}_s{k}.wav")
        entries.append(ManifestEntry(f"{triple.id}_mix.wav", names, split))
    manifest = Manifest(8000, 2, entries, root=root)
    manifest.save(root / "manifest.json")
    return manifest


def tiny_feature_options(manifest):
    return FeatureOptions(data_path=str(manifest.root), batch_size=4,
                          frame_length=80, window_size=256, hop_size=64,
                          db_threshold=-20.0)


# ---------------------------------------------------------------------
# numeric helpers
# ---------------------------------------------------------------------

def finite_diff_grad(f, x, h=1e-4):
    """Central-difference gradient of scalar f at x, perturbing in place."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_grad_err(analytic, numeric):
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-10)
    return np.max(np.abs(analytic - numeric)) / scale


def snr_db(reference, estimate):
    err = reference - estimate
    return 10.0 * np.log10(np.sum(reference ** 2) / np.sum(err ** 2))


# ---------------------------------------------------------------------
# oracle separation pipeline (shared by acceptance + regeneration)
# ---------------------------------------------------------------------

def oracle_corpus_sdr(manifest, split, kind):
    """Mean oracle-mask SDR and mixture baseline over a manifest split."""
    cfg = dsp.StftConfig(256, 64)
    means, baselines = [], []
    for entry in manifest.entries_for(split):
        mix = read_wav(manifest.resolve(entry.mix))
        refs = [read_wav(manifest.resolve(p)) for p in entry.sources]
        mix_spec = dsp.stft(mix, cfg)
        ref_specs = [dsp.stft(r, cfg) for r in refs]
        masks = separator.oracle_masks(kind, mix_spec, ref_specs)
        ests = separator.apply_masks(mix_spec, masks)
        n = len(ests[0].samples)
        pairing = metrics.eval_pairing([e.samples for e in ests],
                                       [r.samples[:n] for r in refs])
        base = metrics.eval_pairing([mix.samples[:n]] * len(refs),
                                    [r.samples[:n] for r in refs])
        means.append(pairing.mean_sdr)
        baselines.append(base.mean_sdr)
    return {
        "mean_sdr": float(np.mean(means)),
        "baseline_mean_sdr": float(np.mean(baselines)),
        "improvement_db": float(np.mean(means) - np.mean(baselines)),
    }


def load_oracle_baselines():
    with open(BASELINE_PATH) as f:
        return json.load(f)
