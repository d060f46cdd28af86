# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from __future__ import annotations

from typing import Any, Iterable
import os

from ruamel.yaml import YAML
import attr

from mautrix.util.config import BaseFileConfig, ConfigUpdateHelper

from primflow.errors import ConfigError
from primflow.types import SynthSpec, TrainConfig

BASE_CONFIG = "pkg://primflow_cli/example-config.yaml"

yaml = YAML(typ="safe")
SYNTH_FIELDS = [field.name for field in attr.fields(SynthSpec)]


class Config(BaseFileConfig):
    def __init__(self, path: str | None, base_path: str = BASE_CONFIG) -> None:
        super().__init__(path or "config.yaml", base_path)

    def load(self) -> None:
        # a missing file means running on the shipped defaults
        if os.path.exists(self.path):
            super().load()

    def do_update(self, helper: ConfigUpdateHelper) -> None:
        copy, copy_dict, base = helper

        copy("data.format")
        copy("data.stride")
        copy("data.test_fraction")
        copy("data.val_fraction")
        copy("data.split_seed")

        for name in SYNTH_FIELDS:
            copy(f"synth.{name}")

        for name in TrainConfig.field_names():
            copy(f"training.{name}")

        copy("sampling.steps")
        copy("sampling.guidance")
        copy("sampling.seed")
        copy("sampling.threshold")
        copy("sampling.best_of")

        copy("evaluation.jsd_bins")
        copy("evaluation.scales")
        copy("evaluation.ablation_variants")
        copy("evaluation.ablation_seeds")
        copy("evaluation.recovery_tolerance")
        copy("evaluation.infer_steps")

        copy_dict("logging", override_existing_map=True)

    def override(self, assignments: Iterable[str]) -> None:
        """Apply ``section.key=value`` assignments. Values are parsed as YAML scalars."""
        for assignment in assignments:
            key, sep, raw = assignment.partition("=")
            section, _, name = key.strip().partition(".")
            if not sep or not name:
                raise ConfigError(key or assignment, "expected section.key=value")
            values = self.get(section, None)
            if values is None or name not in values:
                raise ConfigError(key, "unknown configuration option")
            self[key.strip()] = yaml.load(raw)

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_mapping(dict(self["training"]))

    def synth_spec(self, extra: dict[str, Any] | None = None) -> SynthSpec:
        values = {**dict(self["synth"]), **(extra or {})}
        unknown = set(values) - set(SYNTH_FIELDS)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown synth option")
        return SynthSpec.deserialize(values)

    def sampling(self, training: TrainConfig) -> dict[str, Any]:
        """Sampling options with unset steps and guidance taken from the training section."""
        steps = self["sampling.steps"]
        guidance = self["sampling.guidance"]
        return {
            "steps": training.euler_steps if steps is None else int(steps),
            "guidance": training.guidance if guidance is None else float(guidance),
            "seed": int(self["sampling.seed"]),
            "threshold": float(self["sampling.threshold"]),
            "best_of": int(self["sampling.best_of"]),
        }
