"""Config schema validation, dotted overrides, compatibility table."""

import json

import pytest

from conftest import toy_train_config_dict
from tfsep.config import (ConfigError, apply_overrides, config_from_dict,
                          load_train_config)


def base_dict(tmp_path):
    return toy_train_config_dict(tmp_path / "corpus", tmp_path / "run")


def test_valid_config_builds(tmp_path):
    cfg = config_from_dict(base_dict(tmp_path))
    assert cfg.model_key == "chimera"
    assert cfg.model.input_dim == 129  # derived from window_size 256
    assert cfg.optimizer.clip == (-1.0, 1.0)


def test_unknown_key_reported_with_path(tmp_path):
    raw = base_dict(tmp_path)
    raw["feature_options"]["bogus"] = 1
    with pytest.raises(ConfigError, match="feature_options.bogus"):
        config_from_dict(raw)


def test_type_violation_reported_with_path(tmp_path):
    raw = base_dict(tmp_path)
    raw["optimizer"]["lr"] = "fast"
    with pytest.raises(ConfigError, match="optimizer.lr"):
        config_from_dict(raw)


def test_missing_required_key(tmp_path):
    raw = base_dict(tmp_path)
    del raw["feature_options"]["data_path"]
    with pytest.raises(ConfigError, match="feature_options.data_path"):
        config_from_dict(raw)


def test_incompatible_pair_rejected(tmp_path):
    raw = base_dict(tmp_path)
    raw["model"]["model_key"] = "dc"
    raw["loss"]["loss_key"] = "mi_msa"
    with pytest.raises(ConfigError, match="not compatible"):
        config_from_dict(raw)


def test_patience_must_be_below_max_epochs(tmp_path):
    raw = base_dict(tmp_path)
    raw["patience"] = raw["max_epochs"]
    with pytest.raises(ConfigError, match="patience"):
        config_from_dict(raw)


def test_model_dims_must_match_feature_bins(tmp_path):
    raw = base_dict(tmp_path)
    raw["model"]["input_dim"] = 100
    with pytest.raises(ConfigError, match="input_dim"):
        config_from_dict(raw)


def test_clip_range_ordering(tmp_path):
    raw = base_dict(tmp_path)
    raw["optimizer"]["clip"] = [1.0, -1.0]
    with pytest.raises(ConfigError, match="optimizer.clip"):
        config_from_dict(raw)


def test_overrides_parse_types_and_paths(tmp_path):
    raw = base_dict(tmp_path)
    out = apply_overrides(raw, ["optimizer.lr=0.01", "model.hidden_dim=32",
                                "loss.dc_variant=weighted"])
    assert out["optimizer"]["lr"] == 0.01
    assert out["model"]["hidden_dim"] == 32
    assert out["loss"]["dc_variant"] == "weighted"
    cfg = config_from_dict(out)
    assert cfg.optimizer.lr == 0.01


def test_override_unknown_path_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown override path"):
        apply_overrides(base_dict(tmp_path), ["model.width=3"])
    with pytest.raises(ConfigError, match="unknown override path"):
        apply_overrides(base_dict(tmp_path), ["optimizer=3"])


def test_override_type_checked_after_merge(tmp_path):
    out = apply_overrides(base_dict(tmp_path), ["optimizer.lr=slow"])
    with pytest.raises(ConfigError, match="optimizer.lr"):
        config_from_dict(out)


def test_load_train_config_from_file(tmp_path):
    path = tmp_path / "train.json"
    path.write_text(json.dumps(base_dict(tmp_path)))
    cfg = load_train_config(path, overrides=["optimizer.lr=0.02"])
    assert cfg.optimizer.lr == 0.02


def test_checkpoint_dir_env_fallback(tmp_path, monkeypatch):
    raw = base_dict(tmp_path)
    raw.pop("checkpoint_dir")
    monkeypatch.setenv("TFSEP_CHECKPOINT_DIR", str(tmp_path / "envdir"))
    cfg = config_from_dict(raw)
    assert cfg.checkpoint_dir == str(tmp_path / "envdir")
