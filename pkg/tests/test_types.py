from __future__ import annotations

import json
import math

import numpy as np
import pytest

from primflow.errors import (
    CheckpointTruncatedError,
    ConfigError,
    DivergenceError,
    IntegrationError,
    NumericalError,
    ParseError,
)
from primflow.types import MetricReport, NormStats, SynthTruth, TrainConfig, TruthEvent


def test_train_config_defaults_are_valid() -> None:
    config = TrainConfig().validate()
    assert not config.conditional
    assert config.evolve(obs=8).conditional


@pytest.mark.parametrize(
    "changes, key",
    [
        ({"lambda_s": -1.0}, "lambda_s"),
        ({"K": 1}, "K"),
        ({"K": 40}, "K"),
        ({"obs": 32}, "obs"),
        ({"d": 10, "H": 4}, "H"),
        ({"dtype": "float16"}, "dtype"),
    ],
)
def test_train_config_rejects_invalid_values(changes: dict, key: str) -> None:
    with pytest.raises(ConfigError) as excinfo:
        TrainConfig().evolve(**changes)
    assert excinfo.value.key == key


def test_train_config_from_mapping_coerces_strings() -> None:
    config = TrainConfig.from_mapping({"M": "3", "alpha": "2.5", "masked": "false"})
    assert config.M == 3
    assert config.alpha == 2.5
    assert config.masked is False
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"unknown": 1})
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"M": 2.5})


def test_metric_report_omits_undefined_ratio() -> None:
    report = MetricReport(ade=0.0, fde=0.0, ratio=None, n_samples=1, ratio_undefined=True)
    data = report.serialize()
    assert "ratio" not in data
    assert data["ratio_undefined"] is True


def test_matrix_fields_serialize_as_lists() -> None:
    stats = NormStats(mean=np.array([1.0, 2.0]), std=np.array([0.5, 1.0]), clamped=[False, False])
    data = stats.serialize()
    assert data["mean"] == [1.0, 2.0]
    truth = SynthTruth(
        true_atoms=[np.eye(2)], events=[[TruthEvent(atom=0, onset=0, length=2)]]
    )
    data = truth.serialize()
    assert data["true_atoms"] == [[[1.0, 0.0], [0.0, 1.0]]]
    restored = SynthTruth.deserialize(json.loads(json.dumps(data)))
    assert np.array_equal(restored.true_atoms[0], np.eye(2))
    assert restored.events[0][0].length == 2


def test_error_messages_name_their_subject() -> None:
    assert "line 4" in str(ParseError(4, "bad"))
    assert IntegrationError(3).step == 3
    assert IntegrationError(3).term == "integrate"
    assert isinstance(DivergenceError(5, "total", math.inf), NumericalError)
    assert "non-finite" in str(DivergenceError(5, "total", math.nan))
    assert "dictionary.content" in str(CheckpointTruncatedError("dictionary.content"))
