# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""Loading helpers shared by the commands."""
from __future__ import annotations

from typing import NamedTuple
from pathlib import Path
import json

import torch

from primflow.checkpoint import Checkpoint, load_checkpoint
from primflow.metrics import recovery_report
from primflow.trainer import CompositionalModel, reconstruct, stats_from_checkpoint
from primflow.trajdata import (
    denormalize_array,
    load_trajectories,
    normalize,
    stack_windows,
    train_val_test_split,
    window,
)
from primflow.types import (
    NormStats,
    RecoveryReport,
    SynthTruth,
    Trajectory,
    TrainConfig,
    TruthEvent,
    WindowSample,
)

from .handler import CommandEvent, UsageError


class LoadedModel(NamedTuple):
    model: CompositionalModel
    checkpoint: Checkpoint
    stats: NormStats | None
    vocabulary: dict[str, int]
    lengths: list[int]


class Splits(NamedTuple):
    dataset: list[Trajectory]
    train: list[Trajectory]
    val: list[Trajectory]
    test: list[Trajectory]


def vocabulary_path(checkpoint: str | Path) -> Path:
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(checkpoint.name + ".tasks.json")


def load_data(evt: CommandEvent, path: str) -> Splits:
    dataset = load_trajectories(path, evt.config["data.format"])
    if not dataset:
        raise UsageError(f"{path} contains no trajectories")
    try:
        train, val, test = train_val_test_split(
            dataset,
            evt.config["data.val_fraction"],
            evt.config["data.test_fraction"],
            evt.config["data.split_seed"],
        )
    except ValueError as e:
        raise UsageError(str(e)) from e
    evt.log.debug(
        f"Loaded {len(dataset)} trajectories"
        f" ({len(train)} train, {len(val)} validation, {len(test)} test)"
    )
    return Splits(dataset, train, val, test)


def select_split(splits: Splits, name: str) -> list[Trajectory]:
    if name == "train":
        return splits.train
    elif name == "test":
        if not splits.test:
            raise UsageError("the test split is empty, set data.test_fraction or use --split")
        return splits.test
    return splits.train + splits.val + splits.test


def make_windows(
    evt: CommandEvent,
    trajectories: list[Trajectory],
    config: TrainConfig,
    stats: NormStats | None = None,
) -> tuple[list[WindowSample], NormStats]:
    """Normalize (with ``stats`` when given) and cut windows of the configured length."""
    normalized, stats = normalize(trajectories, stats)
    samples = window(normalized, config.L, max(config.obs, 1), evt.config["data.stride"])
    if not samples:
        raise UsageError(f"no trajectory is at least {config.L} steps long")
    return samples, stats


def load_model(path: str) -> LoadedModel:
    ckpt = load_checkpoint(path)
    model = CompositionalModel.from_checkpoint(ckpt)
    model.eval()
    vocab_file = vocabulary_path(path)
    vocabulary = json.loads(vocab_file.read_text()) if vocab_file.exists() else {}
    lengths = ckpt.tensors.get("data.lengths")
    return LoadedModel(
        model=model,
        checkpoint=ckpt,
        stats=stats_from_checkpoint(ckpt),
        vocabulary=vocabulary,
        lengths=lengths.tolist() if lengths is not None else [],
    )


def recovery(
    evt: CommandEvent,
    model: CompositionalModel,
    samples: list[WindowSample],
    logits: torch.Tensor,
    truth: SynthTruth,
    dataset: list[Trajectory],
    stats: NormStats,
) -> RecoveryReport:
    """Score the confident placements of ``logits`` against the synthetic ground truth."""
    index = {traj.id: i for i, traj in enumerate(dataset)}
    if len(truth.events) != len(dataset):
        raise UsageError(
            f"truth describes {len(truth.events)} trajectories, data has {len(dataset)}"
        )
    L = model.config.L
    events = []
    for sample in samples:
        start = sample.offset
        events.append(
            [
                TruthEvent(e.atom, e.onset - start, e.length, e.truncated)
                for e in truth.events[index[sample.source_id]]
                if start <= e.onset < start + L
            ]
        )
    x_hat, R = reconstruct(model, logits)
    x = denormalize_array(stack_windows(samples), stats)
    x_hat = denormalize_array(x_hat.double().numpy(), stats)
    return recovery_report(
        x,
        x_hat,
        R.numpy(),
        events,
        model.utilization(),
        int(evt.config["evaluation.recovery_tolerance"]),
    )
