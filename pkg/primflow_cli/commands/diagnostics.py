# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from __future__ import annotations

import torch

from primflow.render import render_dictionary
from primflow.trainer import gradient_suite

from .handler import CommandEvent, HelpSection, arg, command_handler
from .util import load_model

SECTION_DIAGNOSTICS = HelpSection("Diagnostics", 50, "")


@command_handler(
    name="inspect-dict",
    help_section=SECTION_DIAGNOSTICS,
    help_text="Show the learned atoms of a checkpoint",
    arguments=[
        arg("--checkpoint", required=True),
        arg("--svg", help="render the atoms to this SVG file"),
    ],
)
def inspect_dict(evt: CommandEvent) -> None:
    model = load_model(evt.args.checkpoint).model
    with torch.no_grad():
        atoms = model.dictionary()
    widths = atoms.hard_width
    counts = model.onset_counts()
    gamma = model.dictionary.gamma.detach()
    if evt.args.svg:
        render_dictionary(atoms.content.detach().double().numpy(), widths.numpy(), evt.args.svg)
        evt.log.info(f"Wrote {evt.args.svg}")
    evt.reply_json(
        {
            "atoms": [
                {
                    "index": j,
                    "width": int(widths[j]),
                    "soft_width": float(atoms.soft_width[j]),
                    "gamma": float(gamma[j]),
                    "onsets": int(counts[j]),
                }
                for j in range(model.dictionary.size)
            ],
            "utilization": model.utilization(),
        }
    )


@command_handler(
    help_section=SECTION_DIAGNOSTICS,
    help_text="Compare analytic gradients with finite differences on a tiny instance",
    arguments=[
        arg("--size", choices=("tiny",), default="tiny"),
        arg("--seed", type=int, default=7),
        arg("--eps", type=float, default=1e-5, help="finite difference step"),
        arg("--tol", type=float, default=1e-4, help="maximum relative error"),
    ],
)
def gradcheck(evt: CommandEvent) -> int:
    reports = gradient_suite(evt.args.seed, evt.args.eps)
    failed = [name for name, report in reports.items() if not report.passed(evt.args.tol)]
    for name in failed:
        evt.log.error(
            f"Gradient check {name} failed: relative error {reports[name].max_rel_err:.3g}"
        )
    evt.reply_json({"passed": not failed, "reports": reports})
    return 2 if failed else 0
