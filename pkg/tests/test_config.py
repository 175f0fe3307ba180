import pytest

from execution.config import (
    DCConfig,
    PartitionPolicy,
    ResNetConfig,
    TrainConfig,
    UnrollConfig,
    apply_overrides,
    dump_train_config,
    load_train_config,
    parse_key_value_text,
    settings,
    updated,
)
from execution.errors import ConfigError


def test_key_value_parsing_skips_comments_and_blanks():
    text = "# run\nlearning_rate = 0.01\n\nrho=0.2  # loss fraction\n"
    assert parse_key_value_text(text) == {"learning_rate": "0.01", "rho": "0.2"}
    with pytest.raises(ConfigError):
        parse_key_value_text("learning_rate 0.01")


def test_flat_and_dotted_keys_reach_nested_fields():
    cfg = apply_overrides(TrainConfig(), {"rho": "0.25", "unroll.dc.n_cg_iterations": "7", "center-keep": "6x8"})
    assert cfg.partition.rho == 0.25
    assert cfg.unroll.dc.n_cg_iterations == 7
    assert cfg.partition.center_keep == (6, 8)


def test_overrides_beat_file_beat_defaults(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("n_epochs = 5\nseed = 3\n")
    cfg = load_train_config(path, {"seed": 9, "n_channels": None})
    assert cfg.n_epochs == 5
    assert cfg.seed == 9
    assert cfg.resnet.n_channels == ResNetConfig().n_channels


def test_dump_loads_back_to_the_same_config(tmp_path):
    cfg = apply_overrides(TrainConfig(), {"scheme": "uniform", "center_keep": "2,2", "train_mu": "false"})
    path = tmp_path / "dump.cfg"
    path.write_text(dump_train_config(cfg))
    assert load_train_config(path) == cfg


@pytest.mark.parametrize("overrides", [
    {"nonsense": 1},
    {"rho": "1.5"},
    {"kernel_size": "4"},
    {"batch_size": "2"},
    {"scheme": "poisson"},
    {"mu": "0"},
    {"mu": "-0.1"},
])
def test_invalid_values_raise_config_error(overrides):
    with pytest.raises(ConfigError):
        apply_overrides(TrainConfig(), overrides)


def test_missing_config_file_raises(tmp_path):
    with pytest.raises(ConfigError):
        load_train_config(tmp_path / "absent.cfg")


def test_updated_validates():
    assert updated(PartitionPolicy(), rho=0.6).rho == 0.6
    with pytest.raises(ConfigError):
        updated(PartitionPolicy(), rho=0.0)
    with pytest.raises(ConfigError):
        updated(UnrollConfig(), weights_shared=False)


def test_precision_default_follows_settings(monkeypatch):
    monkeypatch.setattr(settings, "precision", "float32")
    assert TrainConfig().precision == "float32"
    assert load_train_config(overrides={"precision": "float64"}).precision == "float64"


def test_zero_penalty_is_a_solver_setting_only():
    assert DCConfig(mu=0.0).mu == 0.0
    with pytest.raises(ValueError):
        UnrollConfig(dc=DCConfig(mu=0.0))
