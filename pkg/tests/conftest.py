from __future__ import annotations

import numpy as np
import pytest
import torch

from primflow.primdict import EffectiveAtom
from primflow.trainer import TINY
from primflow.types import TrainConfig, Trajectory


@pytest.fixture
def tiny_config() -> TrainConfig:
    return TINY


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def make_atoms(content: list | np.ndarray, widths: list[float] | None = None) -> EffectiveAtom:
    """Effective atoms with the given ``M x C x K`` content and integer widths, unmasked."""
    content = torch.as_tensor(np.asarray(content, dtype=np.float64))
    M, _, K = content.shape
    w = torch.tensor(widths if widths is not None else [float(K)] * M, dtype=torch.float64)
    return EffectiveAtom(
        content=content, soft_width=w, width=w, mask=torch.ones(M, K, dtype=torch.float64)
    )


def make_trajectories(
    n: int, length: int, channels: int = 2, seed: int = 0, tasks: int = 1
) -> list[Trajectory]:
    gen = np.random.default_rng(seed)
    return [
        Trajectory(
            id=f"t{i}",
            task=f"task{i % tasks}",
            points=np.cumsum(gen.normal(0, 0.1, size=(channels, length)), axis=1),
        )
        for i in range(n)
    ]
