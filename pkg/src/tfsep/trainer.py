"""Config-driven training: optimize, validate, early-stop, checkpoint.

Per epoch: iterate shuffled training batches (forward, loss, backward,
elementwise gradient clip, Adam step), then compute the mean validation
loss with dropout disabled. The best-validation checkpoint is kept next
to the latest one; training stops at max_epochs or once the validation
loss has not strictly decreased for `patience` epochs. All stochastic
streams derive from the config seed per epoch, so a run can be resumed
from the latest checkpoint and reproduce the uninterrupted trajectory.
"""

from __future__ import annotations

import base64
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses as losses_mod
from . import tensor as T
from .config import TrainConfig
from .data import Manifest, build_loader
from .models import build_model
from .seeding import derive_seed, stream_rng
from .tensor import AdamState

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainState:
    epoch: int = 0
    best_valid: float = float("inf")
    since_improve: int = 0
    adam: AdamState = field(default_factory=AdamState)


@dataclass
class TrainResult:
    records: list
    best_valid: float
    epochs_run: int
    stopped_early: bool
    best_path: Path
    latest_path: Path
    metrics_path: Path


def train_loop(max_epochs, patience, run_epoch, validate_epoch,
               on_improve=None, on_epoch=None, start_epoch=0,
               best_valid=float("inf"), since_improve=0):
    """The optimize/validate/early-stop engine, detached from any model.

    run_epoch(epoch) -> train loss; validate_epoch(epoch) -> valid loss.
    Improvement means a strict decrease below the best value seen so
    far; any decrease resets the patience counter. Returns the per-epoch
    records plus the final (best_valid, since_improve) bookkeeping.
    """
    records = []
    for epoch in range(start_epoch + 1, max_epochs + 1):
        started = time.monotonic()
        train_loss = run_epoch(epoch)
        valid_loss = validate_epoch(epoch)
        improved = valid_loss < best_valid
        if improved:
            best_valid = valid_loss
            since_improve = 0
            if on_improve is not None:
                on_improve(epoch, valid_loss)
        else:
            since_improve += 1
        record = {
            "epoch": epoch,
            "train_loss": train_loss,
            "valid_loss": valid_loss,
            "seconds": time.monotonic() - started,
        }
        records.append(record)
        if on_epoch is not None:
            on_epoch(record, best_valid, since_improve)
        if since_improve >= patience:
            break
    return records, best_valid, since_improve


def train(config: TrainConfig, resume_from=None, echo_metrics=False):
    """Run the full training described by the config; see module docstring."""
    manifest = Manifest.load(Path(config.feature_options.data_path) / "manifest.json")
    model = build_model(config.model_key, config.model, seed=config.seed)
    state = TrainState()
    if resume_from is not None:
        model, _, state = load_checkpoint(resume_from, expected_config=config)
        if state is None:
            raise CheckpointError(f"{resume_from}: checkpoint has no training state")
    loss_fn = losses_mod.make_loss(config.loss_key, alpha=config.alpha,
                                   dc_variant=config.dc_variant)

    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    best_path = ckpt_dir / "best.ckpt.json"
    latest_path = ckpt_dir / "latest.ckpt.json"
    metrics_path = ckpt_dir / "metrics.jsonl"

    mode = "a" if resume_from is not None else "w"
    metrics_file = open(metrics_path, mode)
    header = {"event": "header", "config": config.to_dict()}
    _emit(metrics_file, header, echo_metrics)

    def run_epoch(epoch):
        model.train()
        model.set_dropout_rng(stream_rng(config.seed, f"dropout:{epoch}"))
        loader = build_loader(
            config.feature_options, config.model_key, manifest,
            shuffle_seed=derive_seed(config.seed, f"shuffle:{epoch}"),
            split="train", loss_key=config.loss_key, dc_variant=config.dc_variant)
        return _run_training_epoch(model, loader, loss_fn, config, state, epoch)

    def validate_epoch(epoch):
        loader = build_loader(
            config.feature_options, config.model_key, manifest,
            shuffle_seed=None, split="valid",
            loss_key=config.loss_key, dc_variant=config.dc_variant)
        return validate(model, loader, loss_fn)

    def on_improve(epoch, valid_loss):
        save_checkpoint(best_path, config, model, state=None)

    def on_epoch(record, best_valid, since_improve):
        state.epoch = record["epoch"]
        state.best_valid = best_valid
        state.since_improve = since_improve
        save_checkpoint(latest_path, config, model, state=state)
        _emit(metrics_file, record, echo_metrics)
        log.info("epoch %d: train %.6f valid %.6f", record["epoch"],
                 record["train_loss"], record["valid_loss"])

    try:
        records, best_valid, since_improve = train_loop(
            config.max_epochs, config.patience, run_epoch, validate_epoch,
            on_improve=on_improve, on_epoch=on_epoch,
            start_epoch=state.epoch, best_valid=state.best_valid,
            since_improve=state.since_improve)
    finally:
        metrics_file.close()
    return TrainResult(
        records=records,
        best_valid=best_valid,
        epochs_run=state.epoch,
        stopped_early=since_improve >= config.patience,
        best_path=best_path,
        latest_path=latest_path,
        metrics_path=metrics_path,
    )


def _run_training_epoch(model, loader, loss_fn, config, state, epoch):
    params = model.parameters()
    total, count = 0.0, 0
    lo, hi = config.optimizer.clip
    for i, batch in enumerate(loader):
        model.zero_grad()
        outputs = model(batch.inputs)
        loss = loss_fn(outputs, batch.labels)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(
                f"non-finite training loss {value} at epoch {epoch}, batch {i}")
        loss.backward()
        T.clip_gradients(params, lo, hi)
        T.adam_step(params, [p.tensor.grad for p in params], state.adam,
                    lr=config.optimizer.lr, beta1=config.optimizer.beta1,
                    beta2=config.optimizer.beta2, eps=config.optimizer.eps)
        total += value * batch.size
        count += batch.size
    if count == 0:
        raise TrainingError(f"no training batches at epoch {epoch}")
    return total / count


def validate(model, loader, loss_fn):
    """Mean loss over a split, weighted by batch size; mutates nothing."""
    model.eval()
    total, count = 0.0, 0
    with T.no_grad():
        for batch in loader:
            loss = loss_fn(model(batch.inputs), batch.labels)
            total += loss.item() * batch.size
            count += batch.size
    if count == 0:
        raise TrainingError("empty validation set")
    return total / count


def _emit(metrics_file, record, echo):
    line = json.dumps(record)
    metrics_file.write(line + "\n")
    metrics_file.flush()
    if echo:
        print(line, flush=True)


# ---------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------

def _encode_array(a):
    a = np.asarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(obj):
    flat = np.frombuffer(base64.b64decode(obj["data"]), dtype="<f8")
    return flat.reshape(obj["shape"]).astype(np.float64)


def save_checkpoint(path, config, model, state=None):
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config.to_dict(),
        "seed": config.seed,
        "params": {name: _encode_array(v) for name, v in model.state_dict().items()},
    }
    if state is not None:
        payload["state"] = {
            "epoch": state.epoch,
            "best_valid": state.best_valid,
            "since_improve": state.since_improve,
            "adam": {
                "step": state.adam.step,
                "m": {k: _encode_array(v) for k, v in state.adam.m.items()},
                "v": {k: _encode_array(v) for k, v in state.adam.v.items()},
            },
        }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f)
    return path


def _trajectory_fields(config):
    # everything that determines the training trajectory; stopping bounds
    # and output paths may differ between an original run and its resume
    d = config.to_dict()
    return {k: v for k, v in d.items()
            if k not in ("max_epochs", "patience", "checkpoint_dir")}


def load_checkpoint(path, expected_config=None):
    """Rebuild (model, config, state) from a checkpoint file.

    Raises CheckpointError on corrupt files, version mismatches, or
    parameter shapes that do not fit the stored config; nothing is
    partially loaded.
    """
    from .config import config_from_dict  # local import avoids cycle at module load

    try:
        with open(path) as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError, OSError) as err:
        raise CheckpointError(f"{path}: corrupt checkpoint ({err})") from err
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format version {version} not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})")
    try:
        config = config_from_dict(payload["config"])
        params = {name: _decode_array(obj) for name, obj in payload["params"].items()}
    except (KeyError, ValueError, TypeError) as err:
        raise CheckpointError(f"{path}: corrupt checkpoint ({err})") from err
    if expected_config is not None and _trajectory_fields(config) != _trajectory_fields(expected_config):
        raise CheckpointError(f"{path}: checkpoint config differs from the supplied config")
    model = build_model(config.model_key, config.model, seed=config.seed)
    try:
        model.load_state_dict(params)
    except ValueError as err:
        raise CheckpointError(f"{path}: {err}") from err
    state = None
    if "state" in payload:
        s = payload["state"]
        try:
            state = TrainState(
                epoch=int(s["epoch"]),
                best_valid=float(s["best_valid"]),
                since_improve=int(s["since_improve"]),
                adam=AdamState.from_arrays(
                    s["adam"]["step"],
                    {k: _decode_array(v) for k, v in s["adam"]["m"].items()},
                    {k: _decode_array(v) for k, v in s["adam"]["v"].items()},
                ),
            )
        except (KeyError, ValueError, TypeError) as err:
            raise CheckpointError(f"{path}: corrupt training state ({err})") from err
    return model, config, state
