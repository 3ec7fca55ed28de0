"""Command-line entry point: synth, train, separate, evaluate.

Human-readable logs go to stderr; machine-readable results (manifest
path, metrics lines, report JSON) go to stdout or the requested files.
Exit code is 0 only when the requested artifact was fully produced.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import metrics as metrics_mod
from . import separator as separator_mod
from . import trainer as trainer_mod
from .audio import SynthSpec, read_wav, write_wav
from .config import ConfigError, load_train_config
from .data import Manifest, generate_synthetic_manifest
from .trainer import CheckpointError, TrainingError

log = logging.getLogger("tfsep")


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not logging.getLogger().handlers:
        logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                            format="%(levelname)s %(message)s")
    logging.getLogger().setLevel(logging.INFO)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, TrainingError, ValueError,
            FileNotFoundError, AssertionError) as err:
        log.error("%s", err)
        return 1


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="tfsep",
        description="Time-frequency mask based speech separation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus plus manifest")
    p.add_argument("--spec", required=True, help="SynthSpec JSON file")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--count", type=int, required=True, help="number of mixtures")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a config JSON")
    p.add_argument("--config", required=True, help="TrainConfig JSON file")
    p.add_argument("--override", action="append", default=[],
                   help="dotted config override, e.g. optimizer.lr=0.01")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="separate a manifest split with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=Manifest.SPLITS)
    p.add_argument("--out", required=True, help="directory for estimate WAVs")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", help="score estimates against a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=Manifest.SPLITS)
    p.add_argument("--estimates", required=True)
    p.add_argument("--report", default=None, help="write the report JSON here")
    p.set_defaults(func=cmd_evaluate)
    return parser


def cmd_synth(args):
    if args.count < 1:
        raise ValueError("empty corpus: --count must be at least 1")
    spec = SynthSpec.from_json(args.spec)
    manifest = generate_synthetic_manifest(args.out, args.count, spec, args.seed)
    manifest_path = Path(args.out) / "manifest.json"
    log.info("wrote %d mixtures (%d WAV files) to %s",
             args.count, args.count * (1 + spec.num_sources), args.out)
    print(manifest_path)
    return 0


def cmd_train(args):
    config = load_train_config(args.config, overrides=args.override)
    result = trainer_mod.train(config, echo_metrics=True)
    log.info("finished after epoch %d; best validation loss %.6f%s",
             result.epochs_run, result.best_valid,
             " (early stop)" if result.stopped_early else "")
    log.info("checkpoints: %s, %s", result.best_path, result.latest_path)
    return 0


def cmd_separate(args):
    model, config, _ = trainer_mod.load_checkpoint(args.checkpoint)
    manifest = Manifest.load(args.manifest)
    if manifest.sample_rate <= 0:
        raise ValueError("manifest sample rate invalid")
    options = config.feature_options
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = manifest.entries_for(args.split)
    if not entries:
        raise ValueError(f"no entries in split {args.split!r}")
    use_masks = getattr(model, "has_mask_head", False)
    method = "mask" if use_masks else "clustering"
    log.info("separating %d utterances with the %s method", len(entries), method)
    for entry in entries:
        mixture = read_wav(manifest.resolve(entry.mix))
        if use_masks:
            result = separator_mod.separate_with_masks(mixture, model, options)
        else:
            result = separator_mod.separate_with_clustering(mixture, model, options)
        for k, est in enumerate(result.estimates, start=1):
            write_wav(out_dir / f"{entry.id}_s{k}.wav", est)
        log.info("separated %s (%s)", entry.id, result.diagnostics["method"])
    print(out_dir)
    return 0


def cmd_evaluate(args):
    manifest = Manifest.load(args.manifest)
    report = metrics_mod.eval_corpus(manifest, args.split, args.estimates)
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n")
        log.info("report written to %s", args.report)
    else:
        print(report.to_json())
    print(report.to_table())
    return 0


if __name__ == "__main__":
    sys.exit(main())
