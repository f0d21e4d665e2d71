import json

import pytest

from mocr import config
from mocr.errors import ConfigError


def write_env(path, **values):
    path.write_text("".join(f"{k}={v}\n" for k, v in values.items()), encoding="utf-8")
    return path


def test_defaults():
    cfg = config.resolve({}, None, {})
    assert cfg.iterations == 1000
    assert cfg.elo.k_factor == 32 and cfg.elo.scale == 400 and cfg.elo.initial_rating == 1000
    assert cfg.pairing == "all-pairs"
    assert cfg.phash_threshold == 6 and cfg.hash_size == 256
    assert set(cfg.sources.values()) == {"default"}


def test_precedence_flag_file_env_default(tmp_path):
    env = {"MOCR_SEED": "1", "MOCR_JOBS": "2", "MOCR_BOOTSTRAP_ITERATIONS": "30"}
    cfg_file = write_env(tmp_path / "run.env", MOCR_SEED="5", MOCR_JOBS="6")
    cfg = config.resolve({"seed": 9, "jobs": None}, cfg_file, env)
    assert cfg.seed == 9
    assert cfg.jobs == 6
    assert cfg.iterations == 30
    assert cfg.phash_threshold == 6
    assert cfg.sources["MOCR_SEED"] == "flag"
    assert cfg.sources["MOCR_JOBS"] == "file"
    assert cfg.sources["MOCR_BOOTSTRAP_ITERATIONS"] == "env"
    assert cfg.sources["MOCR_PHASH_THRESHOLD"] == "default"
    assert cfg.sampling.seed == 9


def test_unknown_file_key_rejected(tmp_path):
    cfg_file = write_env(tmp_path / "run.env", MOCR_SEEDS="3")
    with pytest.raises(ConfigError, match="MOCR_SEEDS"):
        config.resolve({}, cfg_file, {})
    stray = write_env(tmp_path / "stray.env", HOME="/tmp")
    with pytest.raises(ConfigError, match="HOME"):
        config.resolve({}, stray, {})


def test_unknown_prefixed_env_key_rejected():
    with pytest.raises(ConfigError, match="MOCR_ITERATIONS"):
        config.resolve({}, None, {"MOCR_ITERATIONS": "5"})
    # unrelated variables are none of our business
    assert config.resolve({}, None, {"PATH": "/bin"}).iterations == 1000


def test_token_variable_may_be_renamed(tmp_path):
    env = {"MOCR_JUDGE_API_KEY_ENV": "MOCR_OTHER_TOKEN", "MOCR_OTHER_TOKEN": "sk-env"}
    cfg = config.resolve({}, None, env)
    assert cfg.judge.token() == "sk-env"
    cfg_file = write_env(tmp_path / "run.env", MOCR_JUDGE_API_KEY="sk-file")
    assert config.resolve({}, cfg_file, {}).judge.token() == "sk-file"


def test_bad_values_are_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="MOCR_JOBS"):
        config.resolve({}, None, {"MOCR_JOBS": "many"})
    with pytest.raises(ConfigError):
        config.resolve({"iterations": 0}, None, {})
    with pytest.raises(ConfigError):
        config.resolve({"phash_threshold": 65}, None, {})
    with pytest.raises(ConfigError):
        config.resolve({}, None, {"MOCR_ELO_K": "-1"})
    with pytest.raises(ConfigError):
        config.resolve({}, None, {"MOCR_SAMPLE_PROPORTIONS": "0.9,0.9"})
    with pytest.raises(ConfigError):
        config.resolve({}, None, {"MOCR_LOG_LEVEL": "LOUD"})
    with pytest.raises(ConfigError):
        config.resolve({"not_a_setting": 1}, None, {})


def test_domain_caps_parse():
    cfg = config.resolve({}, None, {"MOCR_SAMPLE_DOMAIN_CAPS": "icons=0.3, charts=0.5"})
    assert cfg.sampling.cap_for("icons") == 0.3
    assert cfg.sampling.cap_for("charts") == 0.5
    assert cfg.sampling.cap_for("other") == 1.0
    with pytest.raises(ConfigError):
        config.resolve({}, None, {"MOCR_SAMPLE_DOMAIN_CAPS": "icons"})


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        config.resolve({}, tmp_path / "nope.env", {})


def test_printed_config_redacts_token():
    cfg = config.resolve({}, None, {"MOCR_JUDGE_API_KEY": "sk-very-secret"})
    text = cfg.to_json()
    assert "sk-very-secret" not in text
    assert json.loads(text)["judge"]["api_key"] == "***"
    assert "sk-very-secret" not in repr(cfg)
