# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from __future__ import annotations

from pathlib import Path
import json

import numpy as np

from primflow.checkpoint import load_checkpoint
from primflow.dispatcher import MetricsCSVWriter
from primflow.trainer import Trainer, stats_from_checkpoint
from primflow.trajdata import (
    load_truth,
    normalize,
    stack_windows,
    task_indices,
    task_vocabulary,
    window,
)
from primflow.types import NormStats, Trajectory, TrainConfig

from .handler import CommandEvent, HelpSection, UsageError, arg, command_handler
from .util import load_data, make_windows, recovery, vocabulary_path

SECTION_TRAINING = HelpSection("Training", 20, "")


def validation_windows(
    evt: CommandEvent,
    trajectories: list[Trajectory],
    config: TrainConfig,
    stats: NormStats | None,
    vocabulary: dict[str, int],
) -> tuple[np.ndarray | None, list[int] | None]:
    """Windows of the validation split for conditional models, or ``None`` when there are none."""
    if not trajectories or config.obs == 0:
        return None, None
    normalized, _ = normalize(trajectories, stats)
    samples = window(normalized, config.L, config.obs, evt.config["data.stride"])
    if not samples:
        evt.log.warning(f"No validation trajectory is at least {config.L} steps long")
        return None, None
    tasks = task_indices((s.task for s in samples), vocabulary) if config.n_tasks > 0 else None
    return stack_windows(samples), tasks


@command_handler(
    help_section=SECTION_TRAINING,
    help_text="Jointly train the dictionary, the placement logits and the flow network",
    arguments=[
        arg("--data", required=True, help="trajectory file (csv or jsonl)"),
        arg("--out", required=True, help="checkpoint path, rewritten after every epoch"),
        arg("--metrics", help="CSV file receiving one row of loss terms per epoch"),
        arg("--resume", help="checkpoint to continue training from"),
        arg("--epochs", type=int, help="override training.epochs"),
        arg("--truth", help="synthetic truth JSON, adds a recovery report to the output"),
    ],
)
def train(evt: CommandEvent) -> None:
    splits = load_data(evt, evt.args.data)
    vocabulary = task_vocabulary(traj.task for traj in splits.train)

    if evt.args.resume:
        ckpt = load_checkpoint(evt.args.resume)
        stats = stats_from_checkpoint(ckpt)
        samples, _ = make_windows(evt, splits.train, ckpt.config, stats)
        validation, validation_tasks = validation_windows(
            evt, splits.val, ckpt.config, stats, vocabulary
        )
        trainer = Trainer.resume(ckpt, stack_windows(samples), validation, validation_tasks)
        evt.log.info(f"Resuming from {evt.args.resume} at step {ckpt.step}")
    else:
        config = evt.config.train_config()
        if splits.train[0].channels != config.C:
            raise UsageError(
                f"data has {splits.train[0].channels} channels, training.C is {config.C}"
            )
        samples, stats = make_windows(evt, splits.train, config)
        tasks = None
        if config.n_tasks > 0:
            if len(vocabulary) > config.n_tasks:
                raise UsageError(
                    f"{len(vocabulary)} task labels exceed training.n_tasks={config.n_tasks}"
                )
            tasks = task_indices((s.task for s in samples), vocabulary)
        lengths = [traj.length for traj in splits.train]
        validation, validation_tasks = validation_windows(
            evt, splits.val, config, stats, vocabulary
        )
        trainer = Trainer(
            config,
            stack_windows(samples),
            tasks,
            stats,
            lengths,
            validation=validation,
            validation_tasks=validation_tasks,
        )

    if evt.args.metrics:
        MetricsCSVWriter(evt.args.metrics).attach(trainer)
    trainer.run(evt.args.epochs, evt.args.out)
    trainer.save(evt.args.out)
    vocabulary_path(evt.args.out).write_text(json.dumps(vocabulary))

    summary = {
        "checkpoint": str(Path(evt.args.out)),
        "step": trainer.step,
        "atoms": trainer.model.dictionary.size,
        "utilization": trainer.model.utilization(),
    }
    if trainer.best_val_ade is not None:
        summary["best_val_ade"] = trainer.best_val_ade
        summary["best_epoch"] = trainer.best_epoch
    if evt.args.truth:
        if trainer.stats is None:
            raise UsageError("the checkpoint carries no normalization statistics")
        summary["recovery"] = recovery(
            evt,
            trainer.model,
            samples,
            trainer.model.logit_table(),
            load_truth(evt.args.truth),
            splits.dataset,
            trainer.stats,
        )
    evt.reply_json(summary)
