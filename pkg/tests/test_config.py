"""Config loading, overrides, and invariant gates."""

import json

import pytest

from vocl.config import (
    ConfigError,
    TrainConfig,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    dump_resolved,
    resolve_config,
)


def test_defaults_are_valid():
    TrainConfig().validate()


def test_paper_hyperparameters_are_defaults():
    cfg = TrainConfig()
    assert cfg.batch_size == 16
    assert cfg.learning_rate == 2e-4
    assert cfg.loss_weights.lambda_fm == 2.0
    assert cfg.loss_weights.lambda_mel == 45.0
    assert cfg.loss_weights.lambda_cl == 1.0
    assert cfg.feature.n_fft == 1024
    assert cfg.feature.win_size == 1024
    assert cfg.feature.hop_size == 256
    assert cfg.feature.n_mels == 80


def test_contrastive_needs_batch_of_two():
    import dataclasses

    cfg = TrainConfig(batch_size=1)
    cfg = dataclasses.replace(
        cfg, loss_weights=dataclasses.replace(cfg.loss_weights, cl_mode="mel_wave")
    )
    with pytest.raises(ConfigError, match="batch_size"):
        cfg.validate()


def test_upsample_product_must_match_hop():
    data = {"generator": {"upsample_rates": [8, 8, 2]}}
    cfg = config_from_dict(data)
    with pytest.raises(ConfigError, match="hop_size"):
        cfg.validate()


def test_fraction_and_lambda_gates():
    with pytest.raises(ConfigError, match="data_fraction"):
        TrainConfig(data_fraction=0.0).validate()
    with pytest.raises(ConfigError, match="lambda_mel"):
        config_from_dict({"loss_weights": {"lambda_mel": -1}}).validate()
    with pytest.raises(ConfigError, match="cl_mode"):
        config_from_dict({"loss_weights": {"cl_mode": "bogus"}}).validate()
    with pytest.raises(ConfigError, match="tau"):
        config_from_dict({"contrastive": {"tau": 0.0}}).validate()


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        config_from_dict({"nonsense": 1})


def test_toml_and_json_loading(tmp_path):
    toml_path = tmp_path / "run.toml"
    toml_path.write_text(
        "batch_size = 4\nseed = 9\n\n[loss_weights]\ncl_mode = \"mel_mel\"\n"
    )
    cfg = resolve_config(toml_path)
    assert cfg.batch_size == 4 and cfg.seed == 9
    assert cfg.loss_weights.cl_mode == "mel_mel"

    json_path = tmp_path / "run.json"
    json_path.write_text(json.dumps({"batch_size": 6, "feature": {"segment_samples": 4096}}))
    cfg = resolve_config(json_path)
    assert cfg.batch_size == 6 and cfg.feature.segment_samples == 4096


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        resolve_config(tmp_path / "nope.toml")


def test_dotted_overrides():
    data = apply_overrides(
        {}, ["batch_size=8", "loss_weights.cl_mode=mel_wave", "contrastive.tau=2.5"]
    )
    cfg = config_from_dict(data)
    assert cfg.batch_size == 8
    assert cfg.loss_weights.cl_mode == "mel_wave"
    assert cfg.contrastive.tau == 2.5


def test_override_list_value():
    data = apply_overrides({}, ["generator.upsample_rates=[4, 8, 8]"])
    cfg = config_from_dict(data)
    assert cfg.generator.upsample_rates == (4, 8, 8)


def test_bad_override_shape():
    with pytest.raises(ConfigError, match="key.path=value"):
        apply_overrides({}, ["batch_size"])


def test_round_trip_dict(tmp_path):
    cfg = TrainConfig()
    data = config_to_dict(cfg)
    again = config_from_dict(json.loads(json.dumps(data)))
    assert config_to_dict(again) == data
    dump_resolved(cfg, tmp_path / "resolved.json")
    loaded = json.loads((tmp_path / "resolved.json").read_text())
    assert loaded == json.loads(json.dumps(data))  # tuples serialize as lists


def test_i_disc_derivation():
    assert config_from_dict({"loss_weights": {"cl_mode": "mel_wave"}}).loss_weights.i_disc
    assert not config_from_dict({"loss_weights": {"cl_mode": "mel_mel"}}).loss_weights.i_disc
    assert not TrainConfig().loss_weights.i_disc
