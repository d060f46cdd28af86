from __future__ import annotations

import csv
import logging

from mautrix.util.logging import TraceLogger

from primflow.dispatcher import (
    EpochFinished,
    MetricsCSVWriter,
    TrainingDispatcher,
    TrainingStarted,
)
from primflow.trainer import TINY
from primflow.types import EnergyBreakdown, EpochMetrics, LossBreakdown


class RecordingDispatcher(TrainingDispatcher):
    log: TraceLogger = logging.getLogger("primflow.test.dispatcher")


def _metrics(epoch: int = 1, val_ade: float | None = None) -> EpochMetrics:
    dec = EnergyBreakdown(rec=1.0, sparse=2.0, prim=0.5, geo=0.25, total=1.5)
    flow = EnergyBreakdown(rec=0.5, sparse=1.0, prim=0.0, geo=0.0, total=0.6)
    loss = LossBreakdown(psi_dec=dec, fm_residual=0.75, psi_flow=flow, total=2.55)
    return EpochMetrics(
        epoch=epoch, step=10 * epoch, loss=loss, utilization=0.5, val_ade=val_ade
    )


def test_dispatch_reaches_handlers_by_type() -> None:
    dispatcher = RecordingDispatcher()
    started, finished = [], []
    dispatcher.add_handler(TrainingStarted, started.append)
    dispatcher.add_handler(EpochFinished, finished.append)
    event = EpochFinished(_metrics())
    dispatcher.dispatch(event)
    assert finished == [event]
    assert started == []


def test_failing_handler_does_not_stop_others() -> None:
    dispatcher = RecordingDispatcher()
    seen = []

    def broken(evt: EpochFinished) -> None:
        raise RuntimeError("handler failure")

    dispatcher.add_handler(EpochFinished, broken)
    dispatcher.add_handler(EpochFinished, seen.append)
    dispatcher.dispatch(EpochFinished(_metrics()))
    assert len(seen) == 1


def test_remove_handler() -> None:
    dispatcher = RecordingDispatcher()
    seen = []
    dispatcher.add_handler(TrainingStarted, seen.append)
    dispatcher.remove_handler(TrainingStarted, seen.append)
    dispatcher.dispatch(TrainingStarted(TINY, 4))
    assert seen == []


def test_metrics_csv_writer(tmp_path) -> None:
    dispatcher = RecordingDispatcher()
    path = tmp_path / "logs" / "metrics.csv"
    MetricsCSVWriter(path).attach(dispatcher)
    dispatcher.dispatch(EpochFinished(_metrics(1)))
    dispatcher.dispatch(EpochFinished(_metrics(2, val_ade=0.125)))
    with path.open() as file:
        rows = list(csv.reader(file))
    assert rows[0] == list(MetricsCSVWriter.columns)
    assert len(rows) == 3
    first = dict(zip(rows[0], rows[1]))
    assert first["epoch"] == "1"
    assert first["step"] == "10"
    assert float(first["dec_geo"]) == 0.25
    assert float(first["fm_residual"]) == 0.75
    assert float(first["flow_sparse"]) == 1.0
    assert rows[2][0] == "2"
    assert first["val_ade"] == ""
    assert float(dict(zip(rows[0], rows[2]))["val_ade"]) == 0.125
