# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""
Versioned checkpoint container.

A checkpoint is a UTF-8 text header followed by raw little-endian tensor payloads::

    PRIMFLOW-CHECKPOINT
    version=1
    step=1200
    [config]
    alpha=10.0
    ...
    [tensors]
    dictionary.content float32 8,2,10
    rng.state uint8 5056
    [end]
    <payloads, in table order>

Scalars are written with an empty shape field (``-``).
"""
from __future__ import annotations

from typing import BinaryIO, Dict
from pathlib import Path
import logging

from attr import dataclass
import attr
import numpy as np
import torch

from .errors import CheckpointError, CheckpointTruncatedError, CheckpointVersionError
from .types import TrainConfig

MAGIC = "PRIMFLOW-CHECKPOINT"
VERSION = 1
END = "[end]"

_dtypes: Dict[str, np.dtype] = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "int32": np.dtype("<i4"),
    "int64": np.dtype("<i8"),
    "uint8": np.dtype("u1"),
}
_torch_dtypes = {
    "float32": torch.float32,
    "float64": torch.float64,
    "int32": torch.int32,
    "int64": torch.int64,
    "uint8": torch.uint8,
}

log = logging.getLogger("primflow.checkpoint")


@dataclass(eq=False)
class Checkpoint:
    config: TrainConfig
    tensors: Dict[str, torch.Tensor] = attr.ib(factory=dict)
    step: int = 0
    version: int = VERSION

    @property
    def rng_state(self) -> torch.Tensor | None:
        return self.tensors.get("rng.state")

    def section(self, prefix: str) -> Dict[str, torch.Tensor]:
        """Tensors under ``prefix.``, with the prefix stripped."""
        start = len(prefix) + 1
        return {
            name[start:]: value
            for name, value in self.tensors.items()
            if name.startswith(prefix + ".")
        }


def _dtype_name(tensor: torch.Tensor) -> str:
    name = str(tensor.dtype).removeprefix("torch.")
    if name not in _dtypes:
        raise CheckpointError(f"unsupported dtype {name}")
    return name


def _format_value(value: object) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    header = [MAGIC, f"version={ckpt.version}", f"step={ckpt.step}", "[config]"]
    config = ckpt.config.serialize()
    for key in TrainConfig.field_names():
        header.append(f"{key}={_format_value(config[key])}")
    header.append("[tensors]")
    payloads = []
    for name, tensor in ckpt.tensors.items():
        if any(c.isspace() for c in name):
            raise CheckpointError("tensor names cannot contain whitespace", name)
        dtype = _dtype_name(tensor)
        array = tensor.detach().cpu().contiguous().numpy().astype(_dtypes[dtype], copy=False)
        shape = ",".join(str(n) for n in array.shape) or "-"
        header.append(f"{name} {dtype} {shape}")
        payloads.append(array.tobytes())
    header.append(END)
    # written beside the target, then renamed into place
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as file:
        file.write(("\n".join(header) + "\n").encode("utf-8"))
        for payload in payloads:
            file.write(payload)
    tmp.replace(path)
    log.debug("Saved checkpoint at step %d with %d tensors to %s", ckpt.step, len(payloads), path)


def _read_line(file: BinaryIO) -> str:
    line = file.readline()
    if not line:
        raise CheckpointError("header ends unexpectedly")
    try:
        return line.decode("utf-8").rstrip("\n")
    except UnicodeDecodeError as e:
        raise CheckpointError("header is not valid UTF-8") from e


def _read_key(file: BinaryIO, key: str) -> int:
    line = _read_line(file)
    name, _, value = line.partition("=")
    if name != key:
        raise CheckpointError(f"expected {key!r} in header, got {line!r}")
    try:
        return int(value)
    except ValueError as e:
        raise CheckpointError(f"invalid {key} {value!r}") from e


def load_checkpoint(path: str | Path) -> Checkpoint:
    """
    Read a checkpoint written by :func:`save_checkpoint`.

    The whole header is validated before any payload is read, so a version mismatch never
    produces a partially loaded checkpoint.

    Raises:
        CheckpointVersionError: The header declares an unsupported format version.
        CheckpointTruncatedError: The file ends inside a payload. The error names the tensor.
        CheckpointError: Any other malformed header or payload.
    """
    with open(path, "rb") as file:
        if _read_line(file) != MAGIC:
            raise CheckpointError(f"{path} is not a primflow checkpoint")
        version = _read_key(file, "version")
        if version != VERSION:
            raise CheckpointVersionError(version, VERSION)
        step = _read_key(file, "step")
        if _read_line(file) != "[config]":
            raise CheckpointError("missing [config] section")
        config: Dict[str, str] = {}
        while (line := _read_line(file)) != "[tensors]":
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointError(f"invalid config line {line!r}")
            config[key] = value
        table = []
        while (line := _read_line(file)) != END:
            parts = line.split(" ")
            if len(parts) != 3 or parts[1] not in _dtypes:
                raise CheckpointError(f"invalid tensor table line {line!r}")
            name, dtype, shape_str = parts
            try:
                shape = tuple(int(n) for n in shape_str.split(",")) if shape_str != "-" else ()
            except ValueError as e:
                raise CheckpointError(f"invalid shape {shape_str!r}", name) from e
            table.append((name, dtype, shape))

        tensors = {}
        for name, dtype, shape in table:
            np_dtype = _dtypes[dtype]
            nbytes = int(np.prod(shape, dtype=np.int64)) * np_dtype.itemsize
            data = file.read(nbytes)
            if len(data) != nbytes:
                raise CheckpointTruncatedError(name)
            array = np.frombuffer(data, dtype=np_dtype).reshape(shape)
            tensors[name] = torch.from_numpy(array.copy()).to(_torch_dtypes[dtype])
        if file.read(1):
            raise CheckpointError("trailing bytes after the last tensor")
    return Checkpoint(config=TrainConfig.from_mapping(config), tensors=tensors, step=step)


def restore_tensors(
    target: Dict[str, torch.Tensor], ckpt: Checkpoint, prefix: str | None = None
) -> None:
    """Copy checkpoint tensors into ``target`` in place, checking every shape first."""
    source = ckpt.section(prefix) if prefix else ckpt.tensors
    for name, value in target.items():
        if name not in source:
            raise CheckpointError("missing from checkpoint", name)
        if tuple(source[name].shape) != tuple(value.shape):
            raise CheckpointError(
                f"shape mismatch: checkpoint has {tuple(source[name].shape)}, "
                f"expected {tuple(value.shape)}",
                name,
            )
    with torch.no_grad():
        for name, value in target.items():
            value.copy_(source[name])
