"""Permutation-aligned SDR evaluation.

SDR is projection-based: the estimate is split into its component along
the reference and an orthogonal residual, and the energy ratio is
reported in dB. That makes the score invariant to positive rescaling of
the estimate. Values are clipped into [-60, +60] dB so exact
reconstructions and degenerate estimates stay finite in corpus means.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import audio
from .losses import enumerate_permutations

SDR_CAP_DB = 60.0


def sdr(estimate, reference):
    """10*log10(||projection||^2 / ||residual||^2), clipped to +-60 dB."""
    e = estimate.samples if isinstance(estimate, audio.Waveform) else np.asarray(estimate, dtype=np.float64)
    r = reference.samples if isinstance(reference, audio.Waveform) else np.asarray(reference, dtype=np.float64)
    if e.shape != r.shape:
        raise ValueError(f"length mismatch: estimate {e.shape}, reference {r.shape}")
    ref_energy = float(r @ r)
    if ref_energy == 0.0:
        raise ValueError("reference signal is all zero")
    alpha = float(e @ r) / ref_energy
    target = alpha * r
    residual = e - target
    num = float(target @ target)
    den = float(residual @ residual)
    if den == 0.0:
        return SDR_CAP_DB
    if num == 0.0:
        return -SDR_CAP_DB
    return float(np.clip(10.0 * np.log10(num / den), -SDR_CAP_DB, SDR_CAP_DB))


@dataclass
class PairingResult:
    sdr_per_source: list
    mean_sdr: float
    permutation: tuple  # permutation[c] = reference index assigned to estimate c


def eval_pairing(estimates, references):
    """Best assignment of estimates to references by mean SDR.

    All S! assignments are evaluated; ties resolve to the
    lexicographically first permutation.
    """
    if len(estimates) != len(references):
        raise ValueError(
            f"count mismatch: {len(estimates)} estimates, {len(references)} references")
    s = len(estimates)
    table = np.array([[sdr(est, ref) for ref in references] for est in estimates])
    best = None
    for perm in enumerate_permutations(s):
        scores = [table[c, perm[c]] for c in range(s)]
        mean = float(np.mean(scores))
        if best is None or mean > best.mean_sdr:
            best = PairingResult(scores, mean, perm)
    return best


@dataclass
class EvalReport:
    entries: list
    corpus_mean_sdr: float
    baseline_mean_sdr: float

    @property
    def improvement_db(self):
        return self.corpus_mean_sdr - self.baseline_mean_sdr

    def to_dict(self):
        return {
            "entries": self.entries,
            "corpus_mean_sdr": self.corpus_mean_sdr,
            "baseline_mean_sdr": self.baseline_mean_sdr,
            "improvement_db": self.improvement_db,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self):
        lines = [f"{'utterance':<12} " +
                 " ".join(f"{'s%d' % (k + 1):>8}" for k in range(self._num_sources())) +
                 f" {'mean':>8}"]
        for e in self.entries:
            cells = " ".join(f"{v:8.2f}" for v in e["sdr_per_source"])
            lines.append(f"{e['id']:<12} {cells} {e['mean_sdr']:8.2f}")
        lines.append(f"{'corpus mean':<12} {self.corpus_mean_sdr:8.2f} dB")
        lines.append(f"{'baseline':<12} {self.baseline_mean_sdr:8.2f} dB")
        lines.append(f"{'improvement':<12} {self.improvement_db:8.2f} dB")
        return "\n".join(lines)

    def _num_sources(self):
        return len(self.entries[0]["sdr_per_source"]) if self.entries else 0


def eval_corpus(manifest, split, estimates_dir):
    """Mean SDR over a split, against the mixture-as-estimate baseline.

    Expects estimate files named <utterance id>_s<k>.wav (k 1-based) in
    estimates_dir. Signals are trimmed to the shortest common length per
    utterance before scoring, since mask inference drops the STFT tail.
    """
    from pathlib import Path

    estimates_dir = Path(estimates_dir)
    entries = manifest.entries_for(split)
    if not entries:
        raise ValueError(f"no entries in split {split!r}")
    missing = []
    for entry in entries:
        for k in range(1, manifest.num_sources + 1):
            p = estimates_dir / f"{entry.id}_s{k}.wav"
            if not p.exists():
                missing.append(str(p))
    if missing:
        raise FileNotFoundError("missing estimate files: " + ", ".join(missing))

    rows = []
    baselines = []
    for entry in entries:
        refs = [audio.read_wav(manifest.resolve(p)) for p in entry.sources]
        mix = audio.read_wav(manifest.resolve(entry.mix))
        ests = [audio.read_wav(estimates_dir / f"{entry.id}_s{k}.wav")
                for k in range(1, manifest.num_sources + 1)]
        n = min(min(len(w) for w in refs), min(len(w) for w in ests), len(mix))
        refs = [w.samples[:n] for w in refs]
        ests = [w.samples[:n] for w in ests]
        mix_s = mix.samples[:n]
        pairing = eval_pairing(ests, refs)
        rows.append({
            "id": entry.id,
            "sdr_per_source": pairing.sdr_per_source,
            "mean_sdr": pairing.mean_sdr,
            "permutation": list(pairing.permutation),
        })
        baseline = eval_pairing([mix_s] * manifest.num_sources, refs)
        baselines.append(baseline.mean_sdr)
    corpus_mean = float(np.mean([r["mean_sdr"] for r in rows]))
    baseline_mean = float(np.mean(baselines))
    return EvalReport(rows, corpus_mean, baseline_mean)
