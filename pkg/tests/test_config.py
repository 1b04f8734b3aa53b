import json

import pytest

from loracompass.config import RunConfig, load_config
from loracompass.errors import ValidationError


def test_paper_defaults():
    cfg = load_config()
    assert cfg.env.max_steps == 500
    assert cfg.env.tau == 1.0
    assert cfg.env.proximity_d_m == 100.0
    assert cfg.env.convergence_q == 4
    assert cfg.env.initial_distance_min_m == 200.0
    assert cfg.env.initial_distance_max_m == 2500.0
    assert cfg.explore.beta == 8.0
    assert cfg.explore.alpha == 0.5
    assert cfg.loss.omega1 == 1.5
    assert cfg.loss.omega2 == 1.0
    assert cfg.net.m == 10
    assert tuple(cfg.net.channels) == (16, 32, 64)
    assert cfg.net.hidden == 128
    assert cfg.net.lr == 1e-3
    assert cfg.net.batch_episodes == 50
    assert cfg.sitegen.grid_size_m == 100.0
    assert cfg.sitegen.extent == 25


def test_file_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 7, "env": {"tau": 0.6}, "net": {"m": 6}}))
    cfg = load_config(path)
    assert cfg.seed == 7
    assert cfg.env.tau == 0.6
    assert cfg.net.m == 6
    assert cfg.env.max_steps == 500  # untouched defaults remain


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"env": {"taus": 0.6}}))
    with pytest.raises(ValidationError):
        load_config(path)
    path.write_text(json.dumps({"enviroment": {}}))
    with pytest.raises(ValidationError):
        load_config(path)


def test_environment_overrides():
    cfg = load_config(environ={"LORACOMPASS_ENV_TAU": "0.7", "LORACOMPASS_SEED": "12",
                               "LORACOMPASS_NET_BATCH_EPISODES": "10"})
    assert cfg.env.tau == 0.7
    assert cfg.seed == 12
    assert cfg.net.batch_episodes == 10


def test_flag_overrides_beat_env_and_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"env": {"tau": 0.5}}))
    cfg = load_config(path, environ={"LORACOMPASS_ENV_TAU": "0.6"},
                      overrides={"env.tau": "0.8"})
    assert cfg.env.tau == 0.8


def test_channels_parse_from_string():
    cfg = load_config(overrides={"net.channels": "8,12,16"})
    assert tuple(cfg.net.channels) == (8, 12, 16)


def test_validation_runs_on_load():
    with pytest.raises(ValidationError):
        load_config(overrides={"env.tau": "1.5"})
    with pytest.raises(ValidationError):
        load_config(overrides={"sitegen.shadowing_sigma_db": "-2"})


def test_frozen_sitegen_section_replaced():
    cfg = load_config(overrides={"sitegen.extent": "12"})
    assert cfg.sitegen.extent == 12
    assert isinstance(cfg, RunConfig)
