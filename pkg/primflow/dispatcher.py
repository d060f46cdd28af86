# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from __future__ import annotations

from typing import Any, Callable, TypeVar
from collections import defaultdict
from pathlib import Path
import csv

from attr import dataclass

from mautrix.util.logging import TraceLogger

from .errors import PrimflowError
from .types import EpochMetrics, TrainConfig

T = TypeVar("T")
Handler = Callable[[T], Any]


@dataclass
class TrainingStarted:
    config: TrainConfig
    n_samples: int
    resumed_step: int = 0


@dataclass
class EpochFinished:
    metrics: EpochMetrics


@dataclass
class CheckpointSaved:
    path: Path
    step: int


@dataclass
class TrainingDiverged:
    error: PrimflowError


class TrainingDispatcher:
    """
    This class is used to dispatch the progress events that :class:`Trainer` emits while it
    optimizes.
    """

    log: TraceLogger
    _handlers: dict[type[T], list[Handler]]

    def __init__(self) -> None:
        self._handlers = defaultdict(lambda: [])

    def dispatch(self, event: T) -> None:
        """
        Dispatch an event to handlers registered with :meth:`add_handler`.

        Args:
            event: The event to dispatch.
        """
        self.log.trace("Dispatching %s", event)
        for handler in self._handlers[type(event)]:
            try:
                handler(event)
            except Exception:
                self.log.exception(f"Error while handling event of type {type(event)}")

    def add_handler(self, event_type: type[T], handler: Handler) -> None:
        """
        Add an event handler.

        Args:
            event_type: The type of event to handle.
            handler: The handler function.
        """
        self._handlers[event_type].append(handler)

    def remove_handler(self, event_type: type[T], handler: Handler) -> None:
        """
        Remove an event handler.

        Args:
            event_type: The type of event the handler was registered for.
            handler: The handler function to remove.
        """
        self._handlers[event_type].remove(handler)


class MetricsCSVWriter:
    """Appends one CSV row per finished epoch."""

    columns = (
        "epoch",
        "step",
        "total",
        "dec_rec",
        "dec_sparse",
        "dec_prim",
        "dec_geo",
        "fm_residual",
        "flow_rec",
        "flow_sparse",
        "flow_prim",
        "flow_geo",
        "utilization",
        "val_ade",
    )

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", newline="") as file:
            csv.writer(file).writerow(self.columns)

    def attach(self, dispatcher: TrainingDispatcher) -> MetricsCSVWriter:
        dispatcher.add_handler(EpochFinished, self)
        return self

    def __call__(self, evt: EpochFinished) -> None:
        m = evt.metrics
        dec, flow = m.loss.psi_dec, m.loss.psi_flow
        row = (
            m.epoch,
            m.step,
            m.loss.total,
            dec.rec,
            dec.sparse,
            dec.prim,
            dec.geo,
            m.loss.fm_residual,
            flow.rec,
            flow.sparse,
            flow.prim,
            flow.geo,
            m.utilization,
            "" if m.val_ade is None else m.val_ade,
        )
        with self.path.open("a", newline="") as file:
            csv.writer(file).writerow(row)
