import json

import pytest

from imuvid.config import (
    RunConfig,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    load_config,
    write_config_echo,
)
from imuvid.errors import ConfigError


def test_defaults_mirror_stated_hyperparameters():
    cfg = RunConfig()
    assert cfg.align.epochs == 50
    assert cfg.align.batch_size == 32
    assert cfg.align.lr == 1e-4
    assert cfg.masked.mask_ratio == 0.40
    assert cfg.masked.epochs == 100
    assert cfg.probe.lr == 1e-3
    assert cfg.probe.epochs == 25
    assert cfg.finetune.encoder_lr == 1e-6
    assert cfg.finetune.head_lr == 1e-3
    assert cfg.fewshot.label_counts == (10, 20, 50, 100)
    assert cfg.fewshot.heldout_per_class == 20
    assert cfg.fewshot.repeats == 5
    assert cfg.zeroshot.frac == 0.80
    assert cfg.zeroshot.repeats == 5
    assert cfg.patch.context_length == 250
    assert cfg.patch.patch_length == 16
    assert cfg.patch.stride == 16


def test_roundtrip_through_dict():
    cfg = RunConfig()
    again = config_from_dict(config_to_dict(cfg))
    assert again == cfg


def test_unknown_keys_rejected_at_top_level():
    with pytest.raises(ConfigError, match="unknown config keys"):
        config_from_dict({"seed": 1, "bogus": 2})


def test_unknown_keys_rejected_in_section():
    with pytest.raises(ConfigError, match="align"):
        config_from_dict({"align": {"nope": 1}})


def test_overrides_change_values():
    cfg = apply_overrides(RunConfig(), ["align.lr=0.01", "seed=9", "synth.num_classes=3"])
    assert cfg.align.lr == 0.01
    assert cfg.seed == 9
    assert cfg.synth.num_classes == 3


def test_override_unknown_key_rejected():
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["align.nothing=1"])
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["not-an-assignment"])


def test_load_and_echo_roundtrip(tmp_path):
    cfg = apply_overrides(RunConfig(), ["align.epochs=3"])
    echo = write_config_echo(cfg, tmp_path)
    assert echo.name == "config.json"
    loaded = load_config(echo)
    assert loaded == cfg


def test_invalid_json_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{nope")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(path)


def test_section_validation_propagates(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"imu_encoder": {"model_dim": 30, "num_heads": 4}})
