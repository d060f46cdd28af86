# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from pathlib import Path

from ruamel.yaml import YAML

from primflow.trajdata import FORMATS, save_trajectories, save_truth, synth_generate

from .handler import CommandEvent, HelpSection, UsageError, arg, command_handler

SECTION_DATA = HelpSection("Data", 10, "")


@command_handler(
    help_section=SECTION_DATA,
    help_text="Generate a synthetic dataset of tiled primitives with its ground truth",
    arguments=[
        arg("--spec", help="YAML file whose keys override the synth config section"),
        arg("--out", required=True, help="output directory"),
        arg("--format", choices=FORMATS, default="csv"),
        arg("--seed", type=int, help="override the generator seed"),
    ],
)
def synth(evt: CommandEvent) -> None:
    extra = {}
    if evt.args.spec:
        try:
            extra = YAML(typ="safe").load(Path(evt.args.spec).read_text()) or {}
        except OSError as e:
            raise UsageError(f"cannot read {evt.args.spec}: {e}") from e
        if not isinstance(extra, dict):
            raise UsageError(f"{evt.args.spec} must contain a mapping")
    if evt.args.seed is not None:
        extra["seed"] = evt.args.seed
    spec = evt.config.synth_spec(extra)
    trajectories, truth = synth_generate(spec)
    out = Path(evt.args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / f"trajectories.{evt.args.format}"
    save_trajectories(trajectories, data_path, evt.args.format)
    save_truth(truth, out / "truth.json")
    evt.log.info(f"Wrote {len(trajectories)} synthetic trajectories to {data_path}")
    evt.reply_json(
        {
            "trajectories": str(data_path),
            "truth": str(out / "truth.json"),
            "n": len(trajectories),
            "spec": spec,
        }
    )
