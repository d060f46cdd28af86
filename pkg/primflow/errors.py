# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from __future__ import annotations

import math


class PrimflowError(Exception):
    pass


class ConfigError(PrimflowError):
    key: str

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


class ShapeError(PrimflowError, ValueError):
    pass


class NumericalError(PrimflowError):
    term: str

    def __init__(self, term: str, message: str = "non-finite value") -> None:
        super().__init__(f"{term}: {message}")
        self.term = term


class ParseError(PrimflowError):
    line: int
    message: str

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


class OracleLimitError(PrimflowError):
    count: int
    limit: int

    def __init__(self, count: int, limit: int) -> None:
        super().__init__(f"{count} events exceed the brute-force limit of {limit}")
        self.count = count
        self.limit = limit


class IntegrationError(NumericalError):
    step: int

    def __init__(self, step: int) -> None:
        super().__init__("integrate", f"non-finite state after Euler step {step}")
        self.step = step


class DivergenceError(NumericalError):
    step: int
    value: float

    def __init__(self, step: int, term: str, value: float) -> None:
        if math.isfinite(value):
            message = f"loss {value:.4g} exceeded the divergence limit at step {step}"
        else:
            message = f"non-finite loss at step {step}"
        super().__init__(term, message)
        self.step = step
        self.value = value


class CheckpointError(PrimflowError):
    tensor: str | None

    def __init__(self, message: str, tensor: str | None = None) -> None:
        if tensor:
            message = f"{message} (tensor {tensor!r})"
        super().__init__(message)
        self.tensor = tensor


class CheckpointVersionError(CheckpointError):
    version: int

    def __init__(self, version: int, supported: int) -> None:
        super().__init__(f"unsupported checkpoint version {version} (expected {supported})")
        self.version = version


class CheckpointTruncatedError(CheckpointError):
    def __init__(self, tensor: str) -> None:
        super().__init__("payload ends before the tensor is complete", tensor)
