import json
import os

import pytest

from .errors import ConfigError
from .setting import OUTPUT_DIR_ENV, ExperimentConfig, Settings


def test_defaults():
    config = ExperimentConfig.load(data={}, output_dir="out")
    assert config.n_values == [2, 3, 4]
    assert config.n_tilde_values == [1, 2]
    assert config.seeds == list(range(10))
    assert config.reduction["k"] == 256
    assert config.reduction["v_layers"] == 4 and config.reduction["u_layers"] == 4
    assert config.optimizer["method"] == "lbfgs"
    assert config.baseline["restarts"] == 20
    assert config.burn_in(2) == 64
    assert config.workers is None

    shift = config.shift_for(3)
    assert shift.kind == "wrapped-gaussian"
    assert shift.sigma == 1.0 / 16


def test_partial_override():
    data = {"reduction": {"alpha": 2, "burn_in": 10}, "model": {"n": [3]}}
    config = ExperimentConfig.load(data=data, output_dir="out")
    assert config.reduction["alpha"] == 2
    assert config.reduction["beta"] == 1.0
    assert config.burn_in(3) == 10
    assert config.n_values == [3]


def test_config_hash():
    first = ExperimentConfig.load(data={}, output_dir="a")
    second = ExperimentConfig.load(data={}, output_dir="b")
    assert first.config_hash == second.config_hash

    changed = ExperimentConfig.load(data={"reduction": {"alpha": 0.5}}, output_dir="a")
    assert changed.config_hash != first.config_hash


def test_output_dir_resolution(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    assert ExperimentConfig.load(data={"output_dir": "from_file"}).output_dir == "from_file"

    monkeypatch.setenv(OUTPUT_DIR_ENV, "from_env")
    assert ExperimentConfig.load(data={"output_dir": "from_file"}).output_dir == "from_env"
    assert ExperimentConfig.load(data={}, output_dir="from_arg").output_dir == "from_arg"


@pytest.mark.parametrize(
    "data",
    [
        {"model": {"shift": {"kind": "cauchy"}}},
        {"model": {"shift": {"kind": "point-mass", "params": {}}}},
        {"model": {"n": [2]}, "reduction": {"n_tilde": [2]}},
        {"seeds": []},
        {"seeds": [1, 1]},
        {"reduction": {"k": "many"}},
        {"reduction": {"k": 0}},
        {"reduction": {"alpha": 0.0}},
        {"baseline": {"update": "other"}},
        [1, 2],
    ],
)
def test_invalid_config(data):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(data=data, output_dir="out")


def test_load_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"model": {"n": [1], "shift": {"kind": "uniform-interval", "params": {"a": 0.0, "b": 1.0}}}, "reduction": {"n_tilde": [0]}}))
    config = ExperimentConfig.load(file_path=str(path), output_dir=str(tmp_path))
    assert config.shift_for(1).kind == "uniform-interval"

    with pytest.raises(ConfigError):
        ExperimentConfig.load(file_path=str(tmp_path / "missing.json"))

    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(file_path=str(broken))


def test_with_sigma():
    config = ExperimentConfig.load(data={"model": {"sigma_values": [0.05, 0.1]}}, output_dir="out")
    assert config.sigma_values == [0.05, 0.1]

    child = config.with_sigma(0.05)
    assert child.output_dir == os.path.join("out", "sigma_0.05")
    assert child.shift_for(2).sigma == 0.05
    assert child.sigma_values == []
    assert child.config_hash != config.config_hash


def test_settings_access(tmp_path):
    settings = Settings()
    settings.load({})
    assert settings.get_setting_value("reduction.alpha") == 1.0
    assert settings.get_setting_value("workers") is None

    settings.set_setting_value("reduction.k", 32)
    assert settings.get_setting_value("reduction.k") == 32
    with pytest.raises(ConfigError):
        settings.set_setting_value("reduction.k", -1)
    with pytest.raises(ConfigError):
        settings.get_setting_value("reduction.gamma")

    path = tmp_path / "saved.json"
    settings.save(str(path))
    reloaded = Settings(str(path))
    assert reloaded.load()["reduction"]["k"] == 32


def test_help_text():
    text = Settings().get_help_text()
    for key in ("model.n", "reduction.burn_in", "baseline.update", "seeds", "output_dir"):
        assert key in text
