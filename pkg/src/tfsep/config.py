"""Experiment configuration: JSON schema, validation, dotted overrides.

The JSON file is the single source of truth for an experiment; every
field is type-checked against the schema below and violations are
reported with the offending JSON path. Overrides are dotted
``key=value`` strings whose values parse as JSON (bare words fall back
to strings).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .data import FeatureOptions
from .losses import LOSS_KEYS
from .models import MODEL_KEYS, ModelConfig

CHECKPOINT_DIR_ENV = "TFSEP_CHECKPOINT_DIR"

COMPATIBLE_PAIRS = {
    "dc": ("dc", "dc_weighted"),
    "upit": ("mi_msa", "mi_tpsa"),
    "chimera": ("chimera_msa", "chimera_tpsa"),
}


class ConfigError(ValueError):
    """Schema violation; the message starts with the JSON path."""


_REQUIRED = object()

# leaf spec: (kind, default); kinds: int, number, str, bool, clip_range
_SCHEMA = {
    "feature_options": {
        "data_path": ("str", _REQUIRED),
        "batch_size": ("int", 8),
        "frame_length": ("int", 400),
        "window_size": ("int", 256),
        "hop_size": ("int", 64),
        "db_threshold": ("number", -20.0),
    },
    "model": {
        "model_key": ("str", _REQUIRED),
        "input_dim": ("int", None),
        "output_dim": ("int", None),
        "hidden_dim": ("int", 300),
        "num_layers": ("int", 3),
        "dropout": ("number", 0.3),
        "num_speakers": ("int", 2),
        "embedding_dim": ("int", 20),
        "cell": ("str", "gru"),
    },
    "loss": {
        "loss_key": ("str", _REQUIRED),
        "alpha": ("number", 0.975),
        "dc_variant": ("str", "classic"),
    },
    "optimizer": {
        "lr": ("number", 0.001),
        "clip": ("clip_range", [-1.0, 1.0]),
        "beta1": ("number", 0.9),
        "beta2": ("number", 0.999),
        "eps": ("number", 1e-8),
    },
    "max_epochs": ("int", 100),
    "patience": ("int", 6),
    "seed": ("int", 0),
    "checkpoint_dir": ("str", None),
}


@dataclass
class OptimizerOptions:
    lr: float = 0.001
    clip: tuple = (-1.0, 1.0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    feature_options: FeatureOptions
    model_key: str
    model: ModelConfig
    loss_key: str
    alpha: float = 0.975
    dc_variant: str = "classic"
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    max_epochs: int = 100
    patience: int = 6
    seed: int = 0
    checkpoint_dir: str = "checkpoints"

    def to_dict(self):
        model = self.model.to_dict()
        model["model_key"] = self.model_key
        return {
            "feature_options": self.feature_options.to_dict(),
            "model": model,
            "loss": {
                "loss_key": self.loss_key,
                "alpha": self.alpha,
                "dc_variant": self.dc_variant,
            },
            "optimizer": {
                "lr": self.optimizer.lr,
                "clip": list(self.optimizer.clip),
                "beta1": self.optimizer.beta1,
                "beta2": self.optimizer.beta2,
                "eps": self.optimizer.eps,
            },
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "seed": self.seed,
            "checkpoint_dir": self.checkpoint_dir,
        }


def _check_leaf(path, kind, value):
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {value!r}")
    elif kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {value!r}")
    elif kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {value!r}")
    elif kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected boolean, got {value!r}")
    elif kind == "clip_range":
        ok = (isinstance(value, (list, tuple)) and len(value) == 2
              and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                      for v in value))
        if not ok:
            raise ConfigError(f"{path}: expected [lo, hi] pair of numbers, got {value!r}")
        if value[0] > value[1]:
            raise ConfigError(f"{path}: lo {value[0]} > hi {value[1]}")
    return value


def _validate_section(schema, raw, prefix):
    out = {}
    unknown = set(raw) - set(schema)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{prefix}{key}: unknown key")
    for name, spec in schema.items():
        path = f"{prefix}{name}"
        if isinstance(spec, dict):
            sub = raw.get(name, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"{path}: expected object, got {sub!r}")
            out[name] = _validate_section(spec, sub, path + ".")
            continue
        kind, default = spec
        if name not in raw or raw[name] is None:
            if default is _REQUIRED:
                raise ConfigError(f"{path}: required key missing")
            out[name] = default
        else:
            out[name] = _check_leaf(path, kind, raw[name])
    return out


def config_from_dict(raw):
    """Validate a raw JSON dict and build the typed TrainConfig."""
    if not isinstance(raw, dict):
        raise ConfigError(": top level must be a JSON object")
    d = _validate_section(_SCHEMA, raw, "")

    model_key = d["model"]["model_key"]
    loss_key = d["loss"]["loss_key"]
    if model_key not in MODEL_KEYS:
        raise ConfigError(f"model.model_key: unknown model {model_key!r}")
    if loss_key not in LOSS_KEYS:
        raise ConfigError(f"loss.loss_key: unknown loss {loss_key!r}")
    if loss_key not in COMPATIBLE_PAIRS[model_key]:
        raise ConfigError(
            f"loss.loss_key: loss {loss_key!r} is not compatible with model "
            f"{model_key!r}; allowed: {COMPATIBLE_PAIRS[model_key]}"
        )
    if not 0.0 <= d["loss"]["alpha"] <= 1.0:
        raise ConfigError(f"loss.alpha: must lie in [0, 1], got {d['loss']['alpha']}")
    if d["loss"]["dc_variant"] not in ("classic", "weighted"):
        raise ConfigError(f"loss.dc_variant: unknown variant {d['loss']['dc_variant']!r}")
    if d["patience"] >= d["max_epochs"]:
        raise ConfigError(
            f"patience: must be smaller than max_epochs "
            f"({d['patience']} >= {d['max_epochs']})"
        )

    try:
        fo = FeatureOptions(**d["feature_options"])
    except ValueError as err:
        raise ConfigError(str(err)) from err

    num_bins = fo.window_size // 2 + 1
    m = dict(d["model"])
    m.pop("model_key")
    if m["input_dim"] is None:
        m["input_dim"] = num_bins
    if m["output_dim"] is None:
        m["output_dim"] = m["input_dim"]
    try:
        mc = ModelConfig(**m)
    except ValueError as err:
        raise ConfigError(f"model: {err}") from err
    if mc.input_dim != num_bins or mc.output_dim != num_bins:
        raise ConfigError(
            f"model.input_dim: model dims ({mc.input_dim}/{mc.output_dim}) must equal "
            f"the feature bin count {num_bins} from window_size {fo.window_size}"
        )

    checkpoint_dir = d["checkpoint_dir"] or os.environ.get(CHECKPOINT_DIR_ENV, "checkpoints")
    opt = OptimizerOptions(
        lr=float(d["optimizer"]["lr"]),
        clip=(float(d["optimizer"]["clip"][0]), float(d["optimizer"]["clip"][1])),
        beta1=float(d["optimizer"]["beta1"]),
        beta2=float(d["optimizer"]["beta2"]),
        eps=float(d["optimizer"]["eps"]),
    )
    return TrainConfig(
        feature_options=fo,
        model_key=model_key,
        model=mc,
        loss_key=loss_key,
        alpha=float(d["loss"]["alpha"]),
        dc_variant=d["loss"]["dc_variant"],
        optimizer=opt,
        max_epochs=d["max_epochs"],
        patience=d["patience"],
        seed=d["seed"],
        checkpoint_dir=checkpoint_dir,
    )


def load_train_config(path, overrides=()):
    with open(path) as f:
        raw = json.load(f)
    raw = apply_overrides(raw, overrides)
    return config_from_dict(raw)


def apply_overrides(raw, overrides):
    """Apply dotted key=value overrides; paths must exist in the schema."""
    out = json.loads(json.dumps(raw))  # deep copy
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected form path.key=value")
        dotted, _, text = item.partition("=")
        keys = dotted.split(".")
        node = _SCHEMA
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ConfigError(f"{dotted}: unknown override path")
            node = node[k]
        if not isinstance(node, dict) or keys[-1] not in node or isinstance(node[keys[-1]], dict):
            raise ConfigError(f"{dotted}: unknown override path")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        target = out
        for k in keys[:-1]:
            target = target.setdefault(k, {})
        target[keys[-1]] = value
    return out
