"""Dataset manifests, chunking, and unified (inputs, labels) batching.

A Batch always carries exactly two lists of tensors, "inputs" and
"labels"; the label layout is resolved from the model/loss pairing (see
losses module docstring for the layouts). Utterance features are
recomputed on demand each epoch: STFT, log magnitude, dominant-speaker
one-hots, and utterance-level voice-activity weights, then cut into
fixed-length chunks with the trailing remainder dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio, dsp
from .tensor import Tensor


@dataclass
class FeatureOptions:
    data_path: str
    batch_size: int = 8
    frame_length: int = 400
    window_size: int = 256
    hop_size: int = 64
    db_threshold: float = -20.0

    def __post_init__(self):
        for name in ("batch_size", "frame_length", "window_size", "hop_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"feature_options.{name} must be positive")
        if not np.isfinite(self.db_threshold):
            raise ValueError("feature_options.db_threshold must be finite")

    def stft_config(self):
        return dsp.StftConfig(self.window_size, self.hop_size)

    def to_dict(self):
        return {
            "data_path": self.data_path,
            "batch_size": self.batch_size,
            "frame_length": self.frame_length,
            "window_size": self.window_size,
            "hop_size": self.hop_size,
            "db_threshold": self.db_threshold,
        }


@dataclass
class ManifestEntry:
    mix: str
    sources: list
    split: str

    @property
    def id(self):
        stem = Path(self.mix).stem
        return stem[:-4] if stem.endswith("_mix") else stem


@dataclass
class Manifest:
    sample_rate: int
    num_sources: int
    entries: list
    root: Path = field(default_factory=Path)

    SPLITS = ("train", "valid", "test")

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path) as f:
            raw = json.load(f)
        entries = [ManifestEntry(e["mix"], list(e["sources"]), e["split"])
                   for e in raw["entries"]]
        manifest = cls(int(raw["sample_rate"]), int(raw["num_sources"]), entries,
                       root=path.parent)
        manifest.validate()
        return manifest

    def save(self, path):
        path = Path(path)
        payload = {
            "sample_rate": self.sample_rate,
            "num_sources": self.num_sources,
            "entries": [
                {"mix": e.mix, "sources": e.sources, "split": e.split}
                for e in self.entries
            ],
        }
        with open(path, "w") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")

    def validate(self):
        for e in self.entries:
            if len(e.sources) != self.num_sources:
                raise ValueError(f"{e.mix}: expected {self.num_sources} sources")
            if e.split not in self.SPLITS:
                raise ValueError(f"{e.mix}: unknown split {e.split!r}")
            for p in [e.mix] + e.sources:
                if not (self.root / p).exists():
                    raise FileNotFoundError(f"manifest references missing file {p}")

    def entries_for(self, split):
        return [e for e in self.entries if e.split == split]

    def resolve(self, rel):
        return self.root / rel


def dominant_speaker_labels(clean_mags):
    """One-hot dominant-speaker matrix per T-F bin.

    Input: S magnitude arrays, each (T, F) or (B, T, F). Output has the
    time/frequency axes flattened: (T*F, S) or (B, T*F, S). Ties go to
    the lowest speaker index.
    """
    if not clean_mags:
        raise ValueError("dominant_speaker_labels needs at least one magnitude")
    stackdim = len(clean_mags)
    mags = np.stack([np.asarray(m, dtype=np.float64) for m in clean_mags], axis=-1)
    flat = mags.reshape(mags.shape[:-3] + (-1, stackdim))
    winner = np.argmax(flat, axis=-1)  # first max wins ties
    return np.eye(stackdim)[winner]


@dataclass
class Batch:
    inputs: list
    labels: list

    @property
    def size(self):
        return self.inputs[0].shape[0]


# label assemblies, keyed like the loss functions they feed
_ASSEMBLIES = ("dc", "dc_weighted", "mi_msa", "mi_tpsa", "chimera_msa", "chimera_tpsa")

_MODEL_DEFAULT_ASSEMBLY = {"dc": "dc", "upit": "mi_msa", "chimera": "chimera_msa"}


def resolve_assembly(model_key, loss_key=None, dc_variant="classic"):
    """Map a model/loss pairing to the label layout the loss asserts."""
    key = loss_key or _MODEL_DEFAULT_ASSEMBLY.get(model_key, model_key)
    if key not in _ASSEMBLIES:
        raise ValueError(
            f"unknown model/loss key {model_key!r}/{loss_key!r}; "
            f"label layouts exist for {_ASSEMBLIES}"
        )
    if dc_variant not in ("classic", "weighted"):
        raise ValueError(f"unknown dc_variant {dc_variant!r}")
    return key, dc_variant


class BatchLoader:
    """Deterministic chunk-level loader over one manifest split."""

    def __init__(self, options, model_key, manifest, shuffle_seed=None,
                 split="train", loss_key=None, dc_variant="classic",
                 drop_remainder=True):
        if not manifest.entries:
            raise ValueError("manifest is empty")
        self.options = options
        self.manifest = manifest
        self.split = split
        self.assembly, self.dc_variant = resolve_assembly(model_key, loss_key, dc_variant)
        self.shuffle_seed = shuffle_seed
        self.drop_remainder = drop_remainder
        self.entries = manifest.entries_for(split)

    def __iter__(self):
        chunks = []
        for entry in self.entries:
            chunks.extend(self._featurize(entry))
        if self.shuffle_seed is not None:
            order = np.random.default_rng(self.shuffle_seed).permutation(len(chunks))
        else:
            order = np.arange(len(chunks))
        bs = self.options.batch_size
        for start in range(0, len(order), bs):
            group = [chunks[i] for i in order[start : start + bs]]
            yield self._collate(group)

    def num_chunks(self):
        cfg = self.options.stft_config()
        total = 0
        for entry in self.entries:
            n = audio.read_wav(self.manifest.resolve(entry.mix)).samples.size
            total += dsp.num_frames(n, cfg) // self.options.frame_length
        return total

    # -- internals -----------------------------------------------------
    def _featurize(self, entry):
        cfg = self.options.stft_config()
        try:
            mix = dsp.stft(audio.read_wav(self.manifest.resolve(entry.mix)), cfg)
            srcs = [dsp.stft(audio.read_wav(self.manifest.resolve(p)), cfg)
                    for p in entry.sources]
        except ValueError as err:
            raise ValueError(f"utterance {entry.id}: {err}") from err
        need = self._needs()
        logmag = dsp.log_magnitude(mix.magnitude)
        weights = None
        if "w" in need:
            weights = dsp.va_weights([s.magnitude for s in srcs],
                                     self.options.db_threshold).w
        frames = mix.num_frames
        length = self.options.frame_length
        chunk_count = frames // length
        out = []
        for k in range(chunk_count):
            sl = slice(k * length, (k + 1) * length)
            chunk = {"input": logmag[sl]}
            if "xmag" in need:
                chunk["xmag"] = mix.magnitude[sl]
            if "xph" in need:
                chunk["xph"] = mix.phase[sl]
            if "smag" in need:
                chunk["smag"] = [s.magnitude[sl] for s in srcs]
            if "sph" in need:
                chunk["sph"] = [s.phase[sl] for s in srcs]
            if "y" in need:
                chunk["y"] = dominant_speaker_labels([s.magnitude[sl] for s in srcs])
            if "w" in need:
                chunk["w"] = weights[sl].reshape(-1)
            out.append(chunk)
        return out

    def _needs(self):
        a = self.assembly
        need = set()
        if a in ("dc", "dc_weighted", "chimera_msa", "chimera_tpsa"):
            need |= {"y", "smag"}
        if a == "dc_weighted":
            need.add("w")
        if a in ("mi_msa", "mi_tpsa", "chimera_msa", "chimera_tpsa"):
            need |= {"xmag", "smag"}
        if a in ("mi_tpsa", "chimera_tpsa"):
            need |= {"xph", "sph"}
        if a.startswith("chimera") and self.dc_variant == "weighted":
            need.add("w")
        return need

    def _collate(self, group):
        def gather(key):
            return Tensor(np.stack([c[key] for c in group]))

        def gather_src(key, idx):
            return Tensor(np.stack([c[key][idx] for c in group]))

        s = self.manifest.num_sources
        inputs = [gather("input")]
        a = self.assembly
        if a == "dc":
            labels = [gather("y")]
        elif a == "dc_weighted":
            labels = [gather("y"), gather("w")]
        elif a == "mi_msa":
            labels = [gather("xmag")] + [gather_src("smag", c) for c in range(s)]
        elif a == "mi_tpsa":
            labels = [gather("xmag"), gather("xph")]
            for c in range(s):
                labels.extend([gather_src("smag", c), gather_src("sph", c)])
        elif a == "chimera_msa":
            labels = [gather("y"), gather("xmag")]
            labels += [gather_src("smag", c) for c in range(s)]
            if self.dc_variant == "weighted":
                labels.append(gather("w"))
        else:  # chimera_tpsa
            labels = [gather("y"), gather("xmag")]
            labels += [gather_src("smag", c) for c in range(s)]
            labels.append(gather("xph"))
            labels += [gather_src("sph", c) for c in range(s)]
            if self.dc_variant == "weighted":
                labels.append(gather("w"))
        return Batch(inputs=inputs, labels=labels)


def build_loader(feature_options, model_key, manifest, shuffle_seed=None,
                 split="train", loss_key=None, dc_variant="classic",
                 drop_remainder=True):
    """Batch iterator for one split; identical seed gives identical batches."""
    return BatchLoader(feature_options, model_key, manifest, shuffle_seed,
                       split, loss_key, dc_variant, drop_remainder)


def generate_synthetic_manifest(out_dir, count, synth_spec, seed):
    """Write `count` mixture triples plus a manifest.json into out_dir.

    Triples are seeded individually from (seed, index) so the corpus is
    byte-identical across runs. The split is index-ordered: the first
    count - 2*(count//10) utterances are "train", then count//10 each of
    "valid" and "test".
    """
    if count < 1:
        raise ValueError("empty corpus: count must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_hold = count // 10
    n_train = count - 2 * n_hold
    entries = []
    for i in range(count):
        triple = audio.synth_mixture(synth_spec, rng_seed=[seed, i], id=f"utt{i:04d}")
        split = "train" if i < n_train else ("valid" if i < n_train + n_hold else "test")
        mix_name = f"{triple.id}_mix.wav"
        audio.write_wav(out_dir / mix_name, triple.mixture)
        src_names = []
        for k, src in enumerate(triple.sources, start=1):
            name = f"{triple.id}_s{k}.wav"
            audio.write_wav(out_dir / name, src)
            src_names.append(name)
        entries.append(ManifestEntry(mix_name, src_names, split))
    manifest = Manifest(synth_spec.sample_rate, synth_spec.num_sources, entries,
                        root=out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest
