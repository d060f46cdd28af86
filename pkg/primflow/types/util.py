# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from typing import List, NewType

import numpy as np

from mautrix.types import deserializer, serializer

# A real matrix stored as float64, serialized as nested lists.
Matrix = NewType("Matrix", np.ndarray)

# A real vector stored as float64, serialized as a flat list.
Vector = NewType("Vector", np.ndarray)


@deserializer(Matrix)
def deserialize_matrix(val: List[List[float]]) -> Matrix:
    arr = np.asarray(val, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    return Matrix(arr)


@serializer(Matrix)
def serialize_matrix(val: Matrix) -> List[List[float]]:
    return np.asarray(val, dtype=np.float64).tolist()


@deserializer(Vector)
def deserialize_vector(val: List[float]) -> Vector:
    return Vector(np.asarray(val, dtype=np.float64).reshape(-1))


@serializer(Vector)
def serialize_vector(val: Vector) -> List[float]:
    return np.asarray(val, dtype=np.float64).reshape(-1).tolist()
