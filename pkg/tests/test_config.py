"""Config parsing, validation, paper-scale switch, and hashing."""

import pytest

from nslab.config import ExperimentConfig, load_config
from nslab.errors import ConfigError


def write_ini(tmp_path, body):
    path = tmp_path / "exp.ini"
    path.write_text(body)
    return path


def test_defaults_without_file():
    config = load_config(None, {"kind": "train"})
    assert config.kind == "train"
    assert config.train_images == 2000
    assert config.realizations == 3
    assert config.videos == 20
    assert config.setups == ("relu_maxpool", "softplus_avepool")


def test_file_values_and_overrides(tmp_path):
    path = write_ini(tmp_path, """
[experiment]
seed = 5
realizations = 2

[train]
epochs = 7
""")
    config = load_config(path, {"kind": "train", "seed": 9})
    assert config.seed == 9  # CLI override wins
    assert config.realizations == 2
    assert config.epochs == 7


def test_unknown_section_and_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="section"):
        load_config(write_ini(tmp_path, "[nonsense]\nx = 1\n"), {})
    with pytest.raises(ConfigError, match="key"):
        load_config(write_ini(tmp_path, "[train]\nbogus = 1\n"), {})


def test_bad_values_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_ini(tmp_path, "[train]\nepochs = soon\n"), {})
    with pytest.raises(ConfigError):
        load_config(write_ini(tmp_path, "[experiment]\nrealizations = 0\n"), {})
    with pytest.raises(ConfigError):
        load_config(write_ini(tmp_path, "[experiment]\ndataset = cats\n"), {})


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.ini", {})


def test_paper_scale_restores_full_sizes():
    config = load_config(None, {"kind": "gen-data", "paper_scale": True})
    assert config.train_images == 10000
    assert config.val_images == 1000
    assert config.realizations == 10
    assert config.videos == 100
    assert config.angles_per_template == 60


def test_paper_scale_mnist_videos():
    config = load_config(
        None, {"kind": "gen-data", "paper_scale": True, "dataset": "mnist_rotation"}
    )
    assert config.videos == 10
    assert config.templates == 10  # procedural fallback keeps ten templates


def test_config_hash_ignores_out_and_jobs():
    a = ExperimentConfig(kind="train", out="x", jobs=1)
    b = ExperimentConfig(kind="report", out="y", jobs=4)
    assert a.config_hash() == b.config_hash()
    c = ExperimentConfig(kind="train", out="x", seed=1)
    assert a.config_hash() != c.config_hash()
