# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from typing import Any, Dict, Mapping

from attr import dataclass
import attr

from mautrix.types import SerializableAttrs

from ..errors import ConfigError


@dataclass
class TrainConfig(SerializableAttrs):
    # Mask steepness of the length mask.
    alpha: float = 10.0
    lambda_s: float = 0.1
    lambda_p: float = 0.1
    lambda_g: float = 1.0
    # Weight of the flow-side legality energy.
    beta: float = 0.5
    eta: float = 0.1
    rho: float = 1.0
    tau: float = 0.1
    sigma: float = 1.0

    M: int = 8
    K: int = 10
    L: int = 32
    C: int = 2

    d: int = 64
    H: int = 4
    S: int = 3

    lr_dict: float = 1e-3
    lr_net: float = 1e-3
    lr_logits: float = 5e-3
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0

    # Probability of replacing the context with the null context while training.
    context_dropout: float = 0.1
    euler_steps: int = 50
    guidance: float = 1.5
    # Length of the observed prefix. Zero trains an unconditional model.
    obs: int = 0
    n_tasks: int = 0

    masked: bool = True
    flow_grad_to_logits: bool = True
    logit_init: float = -4.0
    beta_ovl: float = 20.0
    delta_abs: float = 1e-3
    eps_event: float = 1e-6
    divergence_limit: float = 1e6
    deterministic: bool = True
    # Drop atoms with fewer than prune_min_count hard onsets after training.
    prune: bool = False
    prune_min_count: int = 1
    # Stop after this many epochs without a better validation ADE. Zero never stops early.
    patience: int = 0
    # Finish with the weights of the epoch with the best validation ADE.
    keep_best: bool = True
    dtype: str = "float32"

    _weights = ("alpha", "lambda_s", "lambda_p", "lambda_g", "beta", "eta", "rho", "tau", "sigma")

    @classmethod
    def field_names(cls) -> list:
        return [field.name for field in attr.fields(cls)]

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "TrainConfig":
        known = set(cls.field_names())
        values: Dict[str, Any] = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(key, "unknown training option")
            field_type = attr.fields_dict(cls)[key].type
            try:
                values[key] = _coerce(field_type, value)
            except (TypeError, ValueError) as e:
                raise ConfigError(key, str(e)) from e
        return cls(**values).validate()

    def evolve(self, **changes: Any) -> "TrainConfig":
        return attr.evolve(self, **changes).validate()

    def validate(self) -> "TrainConfig":
        for name in self._weights:
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be non-negative")
        if self.alpha <= 0:
            raise ConfigError("alpha", "mask steepness must be positive")
        if self.M < 1:
            raise ConfigError("M", "dictionary needs at least one atom")
        if not 2 <= self.K <= self.L:
            raise ConfigError("K", f"atom extent must be in [2, L={self.L}]")
        if not 0 <= self.obs < self.L:
            raise ConfigError("obs", f"prefix length must be in [0, L={self.L})")
        if self.d % self.H != 0:
            raise ConfigError("H", f"model dim {self.d} is not divisible by {self.H} heads")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype", "must be float32 or float64")
        if not 0 <= self.context_dropout <= 1:
            raise ConfigError("context_dropout", "must be a probability")
        if self.patience < 0:
            raise ConfigError("patience", "must be non-negative")
        return self

    @property
    def conditional(self) -> bool:
        return self.obs > 0


def _coerce(field_type: Any, value: Any) -> Any:
    if field_type in (bool, "bool"):
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    if field_type in (int, "int"):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"expected an integer, got {value}")
        return int(value)
    if field_type in (float, "float"):
        return float(value)
    return str(value)
