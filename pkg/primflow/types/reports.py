# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from typing import List, Optional

from attr import dataclass
import attr

from mautrix.types import SerializableAttrs

from .util import Matrix


@dataclass
class GradReport(SerializableAttrs):
    max_abs_err: float
    max_rel_err: float
    worst_index: int
    n_params: int = 0
    n_compared: int = 0

    def passed(self, rel_tol: float = 1e-4) -> bool:
        return self.max_rel_err <= rel_tol


@dataclass
class EnergyBreakdown(SerializableAttrs):
    rec: float
    sparse: float
    prim: float
    geo: float
    total: float


@dataclass
class LossBreakdown(SerializableAttrs):
    psi_dec: EnergyBreakdown
    fm_residual: float
    psi_flow: EnergyBreakdown
    total: float


@dataclass
class PlacementEntry(SerializableAttrs):
    """One placement as read from or written to a placement file."""

    atom: int
    onset: int
    prob: float = 1.0


@dataclass
class MetricReport(SerializableAttrs):
    ade: float
    fde: float
    ratio: Optional[float]
    n_samples: int
    ratio_undefined: bool = False


@dataclass
class JsdReport(SerializableAttrs):
    jsd_bits: float
    bins: int
    position_bounds: List[List[float]]
    displacement_bounds: List[List[float]]
    n_generated: int
    n_real: int


@dataclass
class EpochMetrics(SerializableAttrs):
    epoch: int
    step: int
    loss: LossBreakdown
    utilization: float
    # ADE of the validation windows in data units, conditional models only
    val_ade: Optional[float] = None


@dataclass
class PredictionMeta(SerializableAttrs):
    source_id: str
    offset: int
    n_events: int
    fallback: bool = False


@dataclass(eq=False)
class Prediction(SerializableAttrs):
    future: Matrix
    meta: PredictionMeta


@dataclass
class AblationRow(SerializableAttrs):
    variant: str
    seed: int
    report: Optional[MetricReport] = None
    failed: bool = False
    error: Optional[str] = None


@dataclass
class RecoveryReport(SerializableAttrs):
    rmse: float
    f1: float
    precision: float
    recall: float
    utilization: float
    per_trajectory_f1: List[float] = attr.ib(factory=list)
