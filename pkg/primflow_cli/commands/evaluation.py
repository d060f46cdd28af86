# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from __future__ import annotations

from pathlib import Path
import json

import torch

from primflow.ablation import SamplingOptions, evaluate_model, format_table, run_ablation
from primflow.flowgen import sample_trajectories
from primflow.legality import GeoParams, energy, events_to_matrix
from primflow.metrics import jsd, metric_report
from primflow.render import render_timeline
from primflow.trainer import infer_logits
from primflow.trajdata import (
    load_trajectories,
    load_truth,
    normalize_array,
    stack_windows,
    task_indices,
)
from primflow.types import PlacementEntry

from .handler import CommandEvent, HelpSection, UsageError, arg, command_handler
from .util import load_data, load_model, make_windows, recovery, select_split

SECTION_EVALUATION = HelpSection("Evaluation", 40, "")


def _compare_files(evt: CommandEvent) -> None:
    pred = {traj.id: traj for traj in load_trajectories(evt.args.pred, evt.config["data.format"])}
    gt = load_trajectories(evt.args.gt, evt.config["data.format"])
    missing = [traj.id for traj in gt if traj.id not in pred]
    if missing:
        raise UsageError(f"{len(missing)} ground truth ids have no prediction, e.g. {missing[0]}")
    if evt.args.jsd:
        report = jsd(
            [pred[traj.id].points for traj in gt],
            [traj.points for traj in gt],
            int(evt.config["evaluation.jsd_bins"]),
        )
    else:
        report = metric_report([pred[traj.id].points for traj in gt], [traj.points for traj in gt])
    evt.reply_json(report)


def _evaluate_checkpoint(evt: CommandEvent) -> None:
    loaded = load_model(evt.args.checkpoint)
    model = loaded.model
    config = model.config
    splits = load_data(evt, evt.args.data)
    options = evt.config.sampling(config)
    result = {}
    if config.conditional:
        test = select_split(splits, evt.args.split)
        samples, stats = make_windows(evt, test, config, loaded.stats)
        tasks = None
        if config.n_tasks > 0:
            tasks = task_indices((s.task for s in samples), loaded.vocabulary)
        sampling = SamplingOptions(
            options["steps"], options["guidance"], options["seed"], options["best_of"]
        )
        result["report"] = evaluate_model(model, samples, stats, sampling, tasks)
    else:
        real = [traj.points for traj in splits.train]
        bins = int(evt.config["evaluation.jsd_bins"])
        scales = []
        for scale in evt.config["evaluation.scales"]:
            n = max(1, int(round(float(scale) * len(real))))
            generated = sample_trajectories(
                model.net,
                model.dictionary,
                n,
                options["steps"],
                options["seed"],
                config.sigma,
                model.encoder,
                loaded.lengths,
                loaded.stats,
            )
            report = jsd(generated, real, bins)
            evt.log.info(f"JSD at {scale:.0%} scale ({n} samples): {report.jsd_bits:.4f}")
            scales.append({"scale": float(scale), "report": report})
        result["jsd"] = scales
    if evt.args.truth:
        held_out = select_split(splits, evt.args.split)
        samples, stats = make_windows(evt, held_out, config, loaded.stats)
        x = torch.as_tensor(stack_windows(samples), dtype=model.dtype)
        logits = infer_logits(
            model, x, int(evt.config["evaluation.infer_steps"]), seed=options["seed"]
        )
        result["recovery"] = recovery(
            evt, model, samples, logits, load_truth(evt.args.truth), splits.dataset, stats
        )
    evt.reply_json(result)


@command_handler(
    name="eval",
    help_section=SECTION_EVALUATION,
    help_text="Score predictions against ground truth, or evaluate a checkpoint on data",
    arguments=[
        arg("--pred", help="predicted futures (trajectory file)"),
        arg("--gt", help="true futures with the same ids as --pred"),
        arg("--jsd", action="store_true", help="compare --pred and --gt as distributions"),
        arg("--checkpoint", help="evaluate this checkpoint on --data instead"),
        arg("--data", help="trajectory file for checkpoint evaluation"),
        arg("--split", choices=("test", "train", "all"), default="test"),
        arg("--truth", help="synthetic truth JSON for a held-out recovery diagnostic"),
    ],
)
def evaluate(evt: CommandEvent) -> None:
    if evt.args.pred or evt.args.gt:
        if not (evt.args.pred and evt.args.gt):
            raise UsageError("--pred and --gt must be given together")
        _compare_files(evt)
    elif evt.args.checkpoint and evt.args.data:
        _evaluate_checkpoint(evt)
    else:
        raise UsageError("give either --pred and --gt, or --checkpoint and --data")


def _read_placements(path: str) -> list[PlacementEntry]:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot read placements from {path}: {e}") from e
    entries = []
    for item in raw:
        if isinstance(item, dict):
            entries.append(PlacementEntry.deserialize(item))
        else:
            atom, onset, *prob = item
            entries.append(PlacementEntry(int(atom), int(onset), float(prob[0]) if prob else 1.0))
    return entries


@command_handler(
    name="eval-energy",
    help_section=SECTION_EVALUATION,
    help_text="Evaluate the legality energy of a placement against a trajectory",
    arguments=[
        arg("--checkpoint", required=True),
        arg("--placements", required=True, help="JSON list of [atom, onset, probability]"),
        arg("--data", required=True, help="trajectory file"),
        arg("--id", help="trajectory id (default: the first trajectory)"),
        arg("--svg", help="render the event timeline to this SVG file"),
    ],
)
def eval_energy(evt: CommandEvent) -> None:
    loaded = load_model(evt.args.checkpoint)
    model = loaded.model
    config = model.config
    dataset = load_trajectories(evt.args.data, evt.config["data.format"])
    chosen = [t for t in dataset if t.id == evt.args.id] if evt.args.id else dataset[:1]
    if not chosen:
        raise UsageError(f"no trajectory {evt.args.id!r} in {evt.args.data}")
    traj = chosen[0]
    if traj.length < config.L or traj.channels != config.C:
        raise UsageError(f"trajectory must be {config.C} x at least {config.L}")
    points = traj.points[:, : config.L]
    if loaded.stats is not None:
        points = normalize_array(points, loaded.stats)
    x = torch.as_tensor(points, dtype=model.dtype)
    entries = _read_placements(evt.args.placements)
    try:
        R = events_to_matrix(
            [(e.atom, e.onset, e.prob) for e in entries], model.dictionary.size, config.L, x.dtype
        )
    except ValueError as e:
        raise UsageError(str(e)) from e
    with torch.no_grad():
        atoms = model.dictionary()
        terms = energy(R, x, atoms, model.dictionary.gamma, GeoParams.from_config(config))
    if evt.args.svg:
        render_timeline(R.numpy(), atoms.hard_width.numpy(), evt.args.svg)
    evt.reply_json(terms.report())


@command_handler(
    help_section=SECTION_EVALUATION,
    help_text="Train and compare ablation variants on the same data and seeds",
    arguments=[
        arg("--data", required=True, help="trajectory file"),
        arg("--variants", help="comma-separated variants, e.g. base,no_mask,no_primitives,Mx3"),
        arg("--seeds", help="comma-separated seeds (default: evaluation.ablation_seeds)"),
        arg("--out", help="write the rows as JSON to this file"),
    ],
)
def ablate(evt: CommandEvent) -> None:
    config = evt.config.train_config()
    if not config.conditional:
        raise UsageError("ablations compare predictions, set training.obs above 0")
    variants = (
        evt.args.variants.split(",")
        if evt.args.variants
        else list(evt.config["evaluation.ablation_variants"])
    )
    try:
        seeds = (
            [int(s) for s in evt.args.seeds.split(",")]
            if evt.args.seeds
            else [int(s) for s in evt.config["evaluation.ablation_seeds"]]
        )
    except ValueError as e:
        raise UsageError(f"invalid seed list: {e}") from e
    splits = load_data(evt, evt.args.data)
    train_samples, stats = make_windows(evt, splits.train, config)
    test_samples, _ = make_windows(evt, select_split(splits, "test"), config, stats)
    options = evt.config.sampling(config)
    sampling = SamplingOptions(
        options["steps"], options["guidance"], options["seed"], options["best_of"]
    )
    rows = run_ablation(train_samples, test_samples, config, variants, seeds, stats, sampling)
    if evt.args.out:
        Path(evt.args.out).write_text(json.dumps([row.serialize() for row in rows], indent=2))
    evt.reply(format_table(rows))
