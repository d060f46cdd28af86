# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from __future__ import annotations

import numpy as np

from primflow.flowgen import generate_placements, predict_batch, sample_trajectories
from primflow.metrics import best_of, metric_report
from primflow.primdict import compose
from primflow.render import render_tiling
from primflow.trajdata import denormalize_array, save_trajectories, task_indices
from primflow.types import Matrix, TrainConfig, Trajectory

from .handler import CommandEvent, HelpSection, UsageError, arg, command_handler
from .util import load_data, load_model, make_windows, select_split

SECTION_GENERATION = HelpSection("Generation", 30, "")

_sampling_args = [
    arg("--steps", type=int, help="Euler steps (default: sampling.steps)"),
    arg("--seed", type=int, help="sampling seed (default: sampling.seed)"),
]


def _sampling(evt: CommandEvent, training: TrainConfig) -> dict:
    options = evt.config.sampling(training)
    if evt.args.steps is not None:
        options["steps"] = evt.args.steps
    if evt.args.seed is not None:
        options["seed"] = evt.args.seed
    if getattr(evt.args, "guidance", None) is not None:
        options["guidance"] = evt.args.guidance
    return options


@command_handler(
    help_section=SECTION_GENERATION,
    help_text="Predict the future of every window of a trajectory file",
    arguments=[
        arg("--checkpoint", required=True),
        arg("--data", required=True, help="trajectory file"),
        arg("--out", required=True, help="predicted futures, in trajectory file format"),
        arg("--gt-out", help="also write the true futures to this file"),
        arg("--split", choices=("test", "train", "all"), default="test"),
        arg("--guidance", type=float, help="guidance scale (default: sampling.guidance)"),
        *_sampling_args,
    ],
)
def predict(evt: CommandEvent) -> None:
    loaded = load_model(evt.args.checkpoint)
    model, stats = loaded.model, loaded.stats
    config = model.config
    if not config.conditional:
        raise UsageError("this checkpoint generates unconditionally, use the sample command")
    options = _sampling(evt, config)
    trajectories = select_split(load_data(evt, evt.args.data), evt.args.split)
    samples, stats = make_windows(evt, trajectories, config, stats)
    prefixes = np.stack([s.observed for s in samples])
    tasks = None
    if model.encoder is not None and config.n_tasks > 0:
        tasks = task_indices((s.task for s in samples), loaded.vocabulary)
    gts = [denormalize_array(s.future, stats) for s in samples]

    candidates = [[] for _ in samples]
    n_fallback = 0
    for k in range(max(options["best_of"], 1)):
        results = predict_batch(
            model.net,
            model.dictionary,
            prefixes,
            model.encoder,
            tasks,
            options["steps"],
            options["guidance"],
            options["seed"] + k,
            config.sigma,
            stats,
            options["threshold"],
        )
        for i, (future, fallback, _) in enumerate(results):
            candidates[i].append(future)
            n_fallback += fallback
    preds = [best_of(c, gt) for c, gt in zip(candidates, gts)]

    def as_trajectories(futures: list[np.ndarray]) -> list[Trajectory]:
        return [
            Trajectory(id=f"{s.source_id}@{s.offset}", task=s.task, points=Matrix(future))
            for s, future in zip(samples, futures)
        ]

    save_trajectories(as_trajectories(preds), evt.args.out)
    if evt.args.gt_out:
        save_trajectories(as_trajectories(gts), evt.args.gt_out)
    report = metric_report(preds, gts)
    evt.log.info(f"Predicted {len(preds)} windows, ADE {report.ade:.4f} FDE {report.fde:.4f}")
    evt.reply_json({"report": report, "fallbacks": n_fallback, "predictions": evt.args.out})


@command_handler(
    help_section=SECTION_GENERATION,
    help_text="Generate trajectories unconditionally",
    arguments=[
        arg("--checkpoint", required=True),
        arg("--n", type=int, default=16, help="number of trajectories"),
        arg("--out", required=True, help="output trajectory file"),
        arg("--svg", help="render the first sample's tiling to this SVG file"),
        *_sampling_args,
    ],
)
def sample(evt: CommandEvent) -> None:
    if evt.args.n < 1:
        raise UsageError("--n must be at least 1")
    loaded = load_model(evt.args.checkpoint)
    model = loaded.model
    options = _sampling(evt, model.config)
    generated = sample_trajectories(
        model.net,
        model.dictionary,
        evt.args.n,
        options["steps"],
        options["seed"],
        model.config.sigma,
        model.encoder,
        loaded.lengths,
        loaded.stats,
    )
    save_trajectories(
        [
            Trajectory(id=f"sample-{i:05d}", task="", points=Matrix(points))
            for i, points in enumerate(generated)
        ],
        evt.args.out,
    )
    if evt.args.svg:
        null = model.encoder.null_context(1) if model.encoder is not None else None
        R, Z1, x_hat = generate_placements(
            model.net,
            model.dictionary,
            1,
            options["steps"],
            1.0,
            options["seed"],
            model.config.sigma,
            h=null,
        )
        _, gate = compose(R, model.dictionary(), model.dictionary.gamma, Z1.clamp(0, 1))
        render_tiling(x_hat[0].double().numpy(), gate[0].detach().numpy(), evt.args.svg)
    evt.reply_json({"samples": evt.args.out, "n": len(generated)})
