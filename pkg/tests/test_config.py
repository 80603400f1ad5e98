import json

import pytest

from vologan.config import ConfigError, RunConfig, load_config, save_config


def test_round_trip(tmp_path):
    cfg = load_config("configs/toy.json")
    save_config(tmp_path / "c.json", cfg)
    assert load_config(tmp_path / "c.json") == cfg


def test_defaults_match_training_recipe():
    cfg = RunConfig()
    assert (cfg.loss.lambda_cyc, cfg.loss.lambda_ide, cfg.loss.lambda_ssim) == (10.0, 0.5, 1.0)
    assert cfg.loss.lambda_channel["d"] == 3.0
    assert (cfg.schedule_g.target_lr, cfg.schedule_d.target_lr) == (0.0002, 0.0001)
    assert (cfg.optim.beta1, cfg.optim.beta2, cfg.optim.momentum) == (0.5, 0.99, 0.9)
    assert cfg.epochs == 80


def test_full_config_is_default(tmp_path):
    full = json.loads(open("configs/full.json").read())
    default = RunConfig().to_dict()
    for key in default:
        if key not in ("data", "run_dir"):
            assert full[key] == default[key], key


def test_unknown_key(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"generator": {"levls": 3}}))
    with pytest.raises(ConfigError, match="levls"):
        load_config(tmp_path / "c.json")


def test_overrides(tmp_path):
    cfg = load_config("configs/toy.json", {"loss.epoch_sw": 3, "epochs": 2})
    assert cfg.loss.epoch_sw == 3 and cfg.epochs == 2


def test_invalid_values(tmp_path):
    with pytest.raises(ConfigError):
        load_config("configs/toy.json", {"epochs": 99})
    with pytest.raises(ConfigError):
        load_config("configs/toy.json", {"generator.input_size": [60, 60]})
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
