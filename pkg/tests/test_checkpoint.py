from __future__ import annotations

import pytest
import torch

from primflow.checkpoint import Checkpoint, load_checkpoint, restore_tensors, save_checkpoint
from primflow.errors import (
    CheckpointError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
)
from primflow.types import TrainConfig


def _checkpoint() -> Checkpoint:
    return Checkpoint(
        config=TrainConfig(M=4, lambda_s=0.3, dtype="float64", masked=False),
        tensors={
            "model.a": torch.arange(6, dtype=torch.float32).view(2, 3) / 7,
            "model.b": torch.randn(3, dtype=torch.float64),
            "scalar": torch.tensor(3.5, dtype=torch.float64),
            "data.lengths": torch.tensor([4, 9], dtype=torch.int64),
            "rng.state": torch.Generator().manual_seed(5).get_state(),
        },
        step=17,
    )


def test_save_and_load_are_bit_identical(tmp_path) -> None:
    ckpt = _checkpoint()
    save_checkpoint(ckpt, tmp_path / "a.ckpt")
    loaded = load_checkpoint(tmp_path / "a.ckpt")
    assert loaded.step == 17
    assert loaded.config == ckpt.config
    assert list(loaded.tensors) == list(ckpt.tensors)
    for name, value in ckpt.tensors.items():
        assert loaded.tensors[name].dtype == value.dtype
        assert torch.equal(loaded.tensors[name], value), name
    assert loaded.tensors["scalar"].shape == ()
    assert loaded.rng_state is not None
    assert set(loaded.section("model")) == {"a", "b"}
    assert not (tmp_path / "a.ckpt.tmp").exists()


def test_truncated_payload_names_the_tensor(tmp_path) -> None:
    path = tmp_path / "a.ckpt"
    ckpt = _checkpoint()
    del ckpt.tensors["rng.state"]
    save_checkpoint(ckpt, path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(CheckpointTruncatedError) as excinfo:
        load_checkpoint(path)
    assert excinfo.value.tensor == "data.lengths"
    assert "data.lengths" in str(excinfo.value)


def test_unknown_version_is_rejected(tmp_path) -> None:
    path = tmp_path / "a.ckpt"
    save_checkpoint(_checkpoint(), path)
    path.write_bytes(path.read_bytes().replace(b"version=1\n", b"version=9\n", 1))
    with pytest.raises(CheckpointVersionError) as excinfo:
        load_checkpoint(path)
    assert excinfo.value.version == 9


@pytest.mark.parametrize(
    "content",
    [b"hello\n", b"PRIMFLOW-CHECKPOINT\nversion=1\n", b"PRIMFLOW-CHECKPOINT\nversion=x\n"],
)
def test_malformed_headers(tmp_path, content: bytes) -> None:
    path = tmp_path / "bad.ckpt"
    path.write_bytes(content)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_trailing_bytes_are_rejected(tmp_path) -> None:
    path = tmp_path / "a.ckpt"
    save_checkpoint(_checkpoint(), path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_unknown_config_key_is_rejected(tmp_path) -> None:
    path = tmp_path / "a.ckpt"
    save_checkpoint(_checkpoint(), path)
    path.write_bytes(path.read_bytes().replace(b"[config]\n", b"[config]\nfoo=1\n", 1))
    with pytest.raises(ConfigError) as excinfo:
        load_checkpoint(path)
    assert excinfo.value.key == "foo"


def test_unsupported_tensors(tmp_path) -> None:
    ckpt = Checkpoint(config=TrainConfig(), tensors={"flags": torch.ones(2, dtype=torch.bool)})
    with pytest.raises(CheckpointError):
        save_checkpoint(ckpt, tmp_path / "a.ckpt")
    ckpt = Checkpoint(config=TrainConfig(), tensors={"bad name": torch.ones(2)})
    with pytest.raises(CheckpointError):
        save_checkpoint(ckpt, tmp_path / "a.ckpt")


def test_restore_tensors_checks_shapes() -> None:
    ckpt = _checkpoint()
    target = {"a": torch.zeros(2, 3), "b": torch.zeros(3, dtype=torch.float64)}
    restore_tensors(target, ckpt, "model")
    assert torch.equal(target["a"], ckpt.tensors["model.a"])
    with pytest.raises(CheckpointError) as excinfo:
        restore_tensors({"a": torch.zeros(3, 2)}, ckpt, "model")
    assert excinfo.value.tensor == "a"
    with pytest.raises(CheckpointError):
        restore_tensors({"c": torch.zeros(1)}, ckpt, "model")
