# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from typing import Any, Dict, List

from attr import dataclass
import attr
import numpy as np

from mautrix.types import SerializableAttrs

from .util import Matrix, Vector, deserialize_matrix, serialize_matrix


@dataclass(eq=False)
class Trajectory(SerializableAttrs):
    id: str
    task: str
    # C x T, one column per timestep
    points: Matrix

    @property
    def channels(self) -> int:
        return self.points.shape[0]

    @property
    def length(self) -> int:
        return self.points.shape[1]

    def with_points(self, points: np.ndarray) -> "Trajectory":
        return Trajectory(id=self.id, task=self.task, points=Matrix(points))


@dataclass(eq=False)
class WindowSample:
    observed: np.ndarray
    future: np.ndarray
    source_id: str
    offset: int
    task: str = ""

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.observed, self.future], axis=1)


@dataclass(eq=False)
class NormStats(SerializableAttrs):
    mean: Vector
    std: Vector
    clamped: List[bool] = attr.ib(factory=list)


@dataclass
class SynthSpec(SerializableAttrs):
    M_true: int = 4
    C: int = 2
    L: int = 32
    K: int = 10
    noise_std: float = 0.01
    n_trajectories: int = 2000
    seed: int = 0
    # Shortest atom length the generator draws.
    min_width: int = 3
    n_tasks: int = 1


@dataclass
class TruthEvent(SerializableAttrs):
    atom: int
    onset: int
    length: int
    truncated: bool = False


@dataclass(eq=False)
class SynthTruth(SerializableAttrs):
    true_atoms: List[Matrix]
    events: List[List[TruthEvent]]

    # mautrix only applies the Matrix serializer to bare fields, not to list items
    def serialize(self) -> Dict[str, Any]:
        return {
            "true_atoms": [serialize_matrix(atom) for atom in self.true_atoms],
            "events": [[event.serialize() for event in row] for row in self.events],
        }

    @classmethod
    def deserialize(cls, data: Dict[str, Any]) -> "SynthTruth":
        return cls(
            true_atoms=[deserialize_matrix(atom) for atom in data["true_atoms"]],
            events=[[TruthEvent.deserialize(event) for event in row] for row in data["events"]],
        )
