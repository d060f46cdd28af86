# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""
Dense flow-matching baseline without primitives.

The baseline flows noise directly to the ``C x L`` trajectory window. It uses the same
velocity network and context encoder as the compositional model, with one token per channel
instead of one per atom, so the two differ only in the compositional mechanism.
"""
from __future__ import annotations

from typing import Sequence
import logging

import numpy as np
import torch
from torch import nn

from mautrix.util.logging import TraceLogger

from .errors import DivergenceError, ShapeError
from .flowgen import ContextEncoder, VelocityNet, integrate, interpolate, sample_noise
from .trajdata import denormalize_array
from .types import NormStats, TrainConfig


class DenseFlowModel(nn.Module):
    config: TrainConfig

    def __init__(self, config: TrainConfig) -> None:
        super().__init__()
        self.config = config.validate()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.net = VelocityNet(config.L, config.d, config.H, config.S)
            self.encoder = (
                ContextEncoder(config.C, config.d, config.n_tasks) if config.conditional else None
            )
        self.to(getattr(torch, config.dtype))

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def widths(self) -> torch.Tensor:
        # every channel token spans the whole window
        return torch.full((self.config.C,), float(self.config.L), dtype=self.dtype)

    def loss(
        self,
        x: torch.Tensor,
        generator: torch.Generator | None = None,
        task: torch.Tensor | None = None,
    ) -> torch.Tensor:
        config = self.config
        B = x.shape[0]
        Z0 = sample_noise(x.shape, config.sigma, generator, x.dtype)
        t = torch.rand(B, generator=generator, dtype=x.dtype)
        state = interpolate(Z0, x, t, config.sigma)
        h = None
        if self.encoder is not None:
            h = self.encoder(x[..., : config.obs], task)
            if config.context_dropout > 0:
                drop = torch.rand(B, generator=generator) < config.context_dropout
                h = torch.where(drop.unsqueeze(-1), self.encoder.null_context(B), h)
        v = self.net(state.Zt, t, self.widths(), h)
        return ((v - state.target_vel) ** 2).mean()


class DenseTrainer:
    log: TraceLogger = logging.getLogger("primflow.dense")

    def __init__(
        self, config: TrainConfig, data: np.ndarray, tasks: Sequence[int] | None = None
    ) -> None:
        if data.ndim != 3 or data.shape[1:] != (config.C, config.L):
            raise ShapeError(
                f"expected N x {config.C} x {config.L} training data, got {tuple(data.shape)}"
            )
        self.config = config
        self.model = DenseFlowModel(config)
        self.data = torch.as_tensor(np.asarray(data), dtype=self.model.dtype)
        self.tasks = torch.as_tensor(list(tasks), dtype=torch.long) if tasks is not None else None
        self.generator = torch.Generator().manual_seed(config.seed)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=config.lr_net)
        self.step = 0

    def run(self, epochs: int | None = None) -> DenseFlowModel:
        epochs = self.config.epochs if epochs is None else epochs
        if self.config.deterministic:
            torch.set_num_threads(1)
        for epoch in range(epochs):
            order = torch.randperm(len(self.data), generator=self.generator)
            losses = []
            for index in order.split(self.config.batch_size):
                self.optimizer.zero_grad()
                task = self.tasks[index] if self.tasks is not None else None
                loss = self.model.loss(self.data[index], self.generator, task)
                value = float(loss.detach())
                if not np.isfinite(value) or value > self.config.divergence_limit:
                    raise DivergenceError(self.step, "fm_residual", value)
                loss.backward()
                self.optimizer.step()
                self.step += 1
                losses.append(value)
            self.log.info(f"Dense epoch {epoch + 1}: fm {np.mean(losses):.5f}")
        return self.model


@torch.no_grad()
def dense_predict(
    model: DenseFlowModel,
    prefixes: np.ndarray,
    tasks: Sequence[int] | None = None,
    steps: int = 50,
    g: float = 1.5,
    seed: int = 0,
    stats: NormStats | None = None,
) -> list[np.ndarray]:
    """Futures for normalized ``B x C x T_obs`` prefixes, denormalized when ``stats`` is given."""
    config = model.config
    B, _, obs = prefixes.shape
    prefix_t = torch.as_tensor(prefixes, dtype=model.dtype)
    h = null = None
    if model.encoder is not None:
        task_t = torch.as_tensor(list(tasks), dtype=torch.long) if tasks is not None else None
        h = model.encoder(prefix_t, task_t)
        null = model.encoder.null_context(B)
    generator = torch.Generator().manual_seed(seed)
    Z0 = sample_noise((B, config.C, config.L), config.sigma, generator, model.dtype)
    X1 = integrate(model.net, Z0, steps, model.widths(), h, g, null)
    futures = []
    for i in range(B):
        future = X1[i, :, obs:].double().numpy()
        futures.append(denormalize_array(future, stats) if stats is not None else future)
    return futures
