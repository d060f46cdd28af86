# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from __future__ import annotations

from typing import Callable, Sequence
import logging
import re

from attr import dataclass
import numpy as np

from .dense import DenseFlowModel, DenseTrainer, dense_predict
from .errors import ConfigError, PrimflowError
from .flowgen import predict_batch
from .metrics import best_of, metric_report
from .trainer import CompositionalModel, Trainer
from .trajdata import denormalize_array, stack_windows, task_indices, task_vocabulary
from .types import AblationRow, MetricReport, NormStats, TrainConfig, WindowSample

log = logging.getLogger("primflow.ablation")

_multiplier = re.compile(r"^M[x*](\d+(?:\.\d+)?)$")


@dataclass(frozen=True)
class Variant:
    name: str
    m_multiplier: float = 1.0
    masked: bool = True
    primitives: bool = True

    @classmethod
    def parse(cls, name: str) -> Variant:
        """``base``, ``no_mask``, ``no_primitives`` or a dictionary size multiplier ``Mx3``."""
        if name == "base":
            return cls(name)
        elif name == "no_mask":
            return cls(name, masked=False)
        elif name == "no_primitives":
            return cls(name, primitives=False)
        match = _multiplier.match(name)
        if not match or float(match.group(1)) <= 0:
            raise ConfigError("variants", f"unknown ablation variant {name!r}")
        return cls(name, m_multiplier=float(match.group(1)))

    def apply(self, base: TrainConfig, seed: int) -> TrainConfig:
        M = max(1, int(round(base.M * self.m_multiplier)))
        return base.evolve(M=M, masked=self.masked and base.masked, seed=seed)


@dataclass
class SamplingOptions:
    steps: int = 50
    guidance: float = 1.5
    seed: int = 0
    best_of: int = 1


def _ground_truth(samples: Sequence[WindowSample], stats: NormStats | None) -> list[np.ndarray]:
    if stats is None:
        return [s.future for s in samples]
    return [denormalize_array(s.future, stats) for s in samples]


def _score_best_of(
    predict: Callable[[int], list[np.ndarray]],
    test: Sequence[WindowSample],
    stats: NormStats | None,
    sampling: SamplingOptions,
) -> MetricReport:
    gts = _ground_truth(test, stats)
    candidates: list[list[np.ndarray]] = [[] for _ in test]
    for k in range(max(sampling.best_of, 1)):
        for i, future in enumerate(predict(sampling.seed + k)):
            candidates[i].append(future)
    return metric_report([best_of(c, gt) for c, gt in zip(candidates, gts)], gts)


def evaluate_model(
    model: CompositionalModel,
    test: Sequence[WindowSample],
    stats: NormStats | None = None,
    sampling: SamplingOptions | None = None,
    tasks: Sequence[int] | None = None,
) -> MetricReport:
    """
    Predict every test window's future and score it against the truth.

    With ``best_of > 1`` every window is predicted that many times with consecutive seeds and
    the prediction closest to the truth is scored.
    """
    sampling = sampling or SamplingOptions()
    prefixes = np.stack([s.observed for s in test])

    def predict(seed: int) -> list[np.ndarray]:
        results = predict_batch(
            model.net,
            model.dictionary,
            prefixes,
            model.encoder,
            tasks,
            sampling.steps,
            sampling.guidance,
            seed,
            model.config.sigma,
            stats,
        )
        n_fallback = sum(fallback for _, fallback, _ in results)
        if n_fallback:
            log.warning(f"{n_fallback}/{len(test)} predictions fell back to constant extension")
        return [future for future, _, _ in results]

    return _score_best_of(predict, test, stats, sampling)


def evaluate_dense(
    model: DenseFlowModel,
    test: Sequence[WindowSample],
    stats: NormStats | None = None,
    sampling: SamplingOptions | None = None,
    tasks: Sequence[int] | None = None,
) -> MetricReport:
    sampling = sampling or SamplingOptions()
    prefixes = np.stack([s.observed for s in test])

    def predict(seed: int) -> list[np.ndarray]:
        return dense_predict(
            model, prefixes, tasks, sampling.steps, sampling.guidance, seed, stats
        )

    return _score_best_of(predict, test, stats, sampling)


def _run_variant(
    variant: Variant,
    config: TrainConfig,
    train: Sequence[WindowSample],
    test: Sequence[WindowSample],
    stats: NormStats | None,
    sampling: SamplingOptions,
) -> MetricReport:
    vocabulary = task_vocabulary(s.task for s in train)
    train_tasks = test_tasks = None
    if config.n_tasks > 0:
        train_tasks = task_indices((s.task for s in train), vocabulary)
        test_tasks = task_indices((s.task for s in test), vocabulary)
    data = stack_windows(train)
    if not variant.primitives:
        model = DenseTrainer(config, data, train_tasks).run()
        return evaluate_dense(model, test, stats, sampling, test_tasks)
    trainer = Trainer(config, data, train_tasks, stats)
    trainer.run()
    return evaluate_model(trainer.model, test, stats, sampling, test_tasks)


def run_ablation(
    train: Sequence[WindowSample],
    test: Sequence[WindowSample],
    base: TrainConfig,
    variants: Sequence[str | Variant],
    seeds: Sequence[int] = (0,),
    stats: NormStats | None = None,
    sampling: SamplingOptions | None = None,
) -> list[AblationRow]:
    """
    Train and score every variant with every seed on the same windows.

    Variants run sequentially in the given order. A variant that fails is recorded as a
    failed row and the run continues.
    """
    if not base.conditional:
        raise ConfigError("obs", "ablations score predictions and need a conditional config")
    sampling = sampling or SamplingOptions()
    parsed = [v if isinstance(v, Variant) else Variant.parse(v) for v in variants]
    rows = []
    for variant in parsed:
        for seed in seeds:
            config = variant.apply(base, seed)
            log.info(f"Running ablation variant {variant.name} with seed {seed}")
            try:
                report = _run_variant(variant, config, train, test, stats, sampling)
            except PrimflowError as e:
                log.warning(f"Ablation variant {variant.name} (seed {seed}) failed: {e}")
                rows.append(
                    AblationRow(variant=variant.name, seed=seed, failed=True, error=str(e))
                )
            else:
                rows.append(AblationRow(variant=variant.name, seed=seed, report=report))
    return rows


def median_ade(rows: Sequence[AblationRow], variant: str) -> float | None:
    values = [r.report.ade for r in rows if r.variant == variant and r.report is not None]
    return float(np.median(values)) if values else None


def format_table(rows: Sequence[AblationRow]) -> str:
    """Aligned text table, one line per row."""
    header = ("variant", "seed", "ADE", "FDE", "FDE/ADE", "n")
    lines = [header]
    for row in rows:
        if row.failed or row.report is None:
            lines.append((row.variant, str(row.seed), "failed", "-", "-", "-"))
            continue
        r = row.report
        ratio = f"{r.ratio:.3f}" if r.ratio is not None else "undef"
        lines.append(
            (row.variant, str(row.seed), f"{r.ade:.4f}", f"{r.fde:.4f}", ratio, str(r.n_samples))
        )
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return "\n".join(
        "  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip()
        for line in lines
    )
