from __future__ import annotations

import pytest

from primflow.errors import ConfigError
from primflow.types import TrainConfig
from primflow_cli.config import Config


def _config(path) -> Config:
    config = Config(str(path))
    config.load()
    config.update(save=False)
    return config


def test_defaults_without_a_file(tmp_path) -> None:
    config = _config(tmp_path / "missing.yaml")
    assert config.train_config() == TrainConfig()
    assert config["sampling.steps"] is None
    assert list(config["evaluation.scales"]) == [0.05, 0.1, 0.2]
    assert config["logging.version"] == 1


def test_validation_and_early_stopping_options(tmp_path) -> None:
    config = _config(tmp_path / "missing.yaml")
    assert config["data.val_fraction"] == 0.1
    config.override(["training.patience=3", "training.keep_best=false"])
    training = config.train_config()
    assert training.patience == 3
    assert training.keep_best is False
    config.override(["training.patience=-1"])
    with pytest.raises(ConfigError) as excinfo:
        config.train_config()
    assert excinfo.value.key == "patience"


def test_user_file_overrides_defaults(tmp_path) -> None:
    path = tmp_path / "config.yaml"
    path.write_text("training:\n    M: 5\n    obs: 4\nsampling:\n    steps: 12\n")
    config = _config(path)
    training = config.train_config()
    assert training.M == 5
    assert training.conditional
    assert training.K == TrainConfig().K
    assert config.sampling(training)["steps"] == 12


def test_override_assignments(tmp_path) -> None:
    config = _config(tmp_path / "missing.yaml")
    config.override(["training.M=3", "training.dtype=float64", "sampling.guidance=2.5"])
    training = config.train_config()
    assert training.M == 3
    assert training.dtype == "float64"
    sampling = config.sampling(training)
    assert sampling["guidance"] == 2.5
    assert sampling["steps"] == training.euler_steps
    assert sampling["best_of"] == 1


@pytest.mark.parametrize("assignment", ["training.foo=1", "nosection.M=1", "training", "M=3"])
def test_bad_overrides(tmp_path, assignment: str) -> None:
    config = _config(tmp_path / "missing.yaml")
    with pytest.raises(ConfigError):
        config.override([assignment])


def test_invalid_training_values(tmp_path) -> None:
    config = _config(tmp_path / "missing.yaml")
    config.override(["training.K=64"])
    with pytest.raises(ConfigError) as excinfo:
        config.train_config()
    assert excinfo.value.key == "K"


def test_synth_spec(tmp_path) -> None:
    config = _config(tmp_path / "missing.yaml")
    spec = config.synth_spec({"n_trajectories": 5})
    assert spec.n_trajectories == 5
    assert spec.M_true == 4
    with pytest.raises(ConfigError):
        config.synth_spec({"bogus": 1})
