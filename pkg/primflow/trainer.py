# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""
Joint optimization of the dictionary, the per-sample placement logits and the flow network.

Every step runs one computation graph. Placements are sampled from the logits and scored by
the legality energy (the dictionary path). They then serve as the flow-matching target, and
the network's one-shot endpoint estimate is scored again (the flow path).
"""
from __future__ import annotations

from typing import Callable, NamedTuple, Sequence
from pathlib import Path
import logging
import math

import numpy as np
import torch
from torch import nn
from torch.func import functional_call

from mautrix.util.logging import TraceLogger

from .checkpoint import Checkpoint, restore_tensors, save_checkpoint
from .diffcore import ensure_finite, grad_check_named, relaxed
from .dispatcher import (
    CheckpointSaved,
    EpochFinished,
    TrainingDiverged,
    TrainingDispatcher,
    TrainingStarted,
)
from .errors import DivergenceError, NumericalError, ShapeError
from .flowgen import (
    ContextEncoder,
    VelocityNet,
    endpoint_estimate,
    interpolate,
    predict_batch,
    sample_noise,
)
from .legality import EnergyTerms, GeoParams, energy
from .metrics import metric_report
from .primdict import Dictionary, EffectiveAtom, compose, sample_placements
from .trajdata import denormalize_array
from .types import (
    EnergyBreakdown,
    EpochMetrics,
    GradReport,
    LossBreakdown,
    NormStats,
    TrainConfig,
    Vector,
)


class JointLoss(NamedTuple):
    total: torch.Tensor
    dec: EnergyTerms
    fm_residual: torch.Tensor
    flow: EnergyTerms

    def breakdown(self) -> LossBreakdown:
        return LossBreakdown(
            psi_dec=self.dec.report(),
            fm_residual=float(self.fm_residual.detach()),
            psi_flow=self.flow.report(),
            total=float(self.total.detach()),
        )


def _zero_terms(like: torch.Tensor) -> EnergyTerms:
    zero = torch.zeros((), dtype=like.dtype, device=like.device)
    return EnergyTerms(rec=zero, sparse=zero, prim=zero, geo=zero, total=zero)


def joint_loss(
    dictionary: Dictionary,
    net: nn.Module,
    x: torch.Tensor,
    logits: torch.Tensor,
    config: TrainConfig,
    generator: torch.Generator | None = None,
    encoder: ContextEncoder | None = None,
    prefix: torch.Tensor | None = None,
    task: torch.Tensor | None = None,
) -> JointLoss:
    """
    Dictionary-path energy + flow-matching residual + ``beta`` times the flow-path energy.

    Args:
        dictionary: The primitive dictionary.
        net: The velocity field. Anything with the :class:`VelocityNet` call signature works.
        x: ``B x C x L`` normalized trajectories.
        logits: ``B x M x L`` placement logits of the batch.
        config: Weights and switches.
        generator: Source of the placement, noise, time and context-dropout draws.
        encoder: Context encoder for conditional training.
        prefix: ``B x C x T_obs`` observed prefixes for conditional training.
        task: Optional task indices.

    Raises:
        NumericalError: A term is not finite. The error names the term.
    """
    if logits.shape[:-2] != x.shape[:-2] or logits.shape[-1] != x.shape[-1]:
        raise ShapeError(f"logits {tuple(logits.shape)} do not match batch {tuple(x.shape)}")
    params = GeoParams.from_config(config)
    atoms = dictionary()
    gamma = dictionary.gamma
    B = x.shape[0]

    placement = sample_placements(logits, generator)
    dec = energy(placement.binary, x, atoms, gamma, params, placement.probs).mean()
    ensure_finite("psi_dec", dec.total)

    R1 = placement.binary if config.flow_grad_to_logits else placement.binary.detach()
    Z0 = sample_noise(R1.shape, config.sigma, generator, R1.dtype)
    t = torch.rand(B, generator=generator, dtype=R1.dtype)
    state = interpolate(Z0, R1, t, config.sigma)

    h = None
    if encoder is not None and prefix is not None:
        h = encoder(prefix, task)
        if config.context_dropout > 0:
            drop = torch.rand(B, generator=generator) < config.context_dropout
            h = torch.where(drop.unsqueeze(-1), encoder.null_context(B), h)
    v = net(state.Zt, t, atoms.soft_width, h)
    fm_residual = ensure_finite(
        "fm_residual", ((v - state.target_vel) ** 2).mean(dim=(-2, -1)).mean()
    )

    if config.beta > 0:
        R_flow = endpoint_estimate(state.Zt, t, v)
        flow = energy(R_flow, x, atoms, gamma, params, R_flow.clamp(0, 1)).mean()
        ensure_finite("psi_flow", flow.total)
        total = dec.total + fm_residual + config.beta * flow.total
    else:
        flow = _zero_terms(fm_residual)
        total = dec.total + fm_residual
    return JointLoss(total=total, dec=dec, fm_residual=fm_residual, flow=flow)


class CompositionalModel(nn.Module):
    """The dictionary, the velocity network, the context encoder and the logit table."""

    config: TrainConfig

    def __init__(self, config: TrainConfig, n_samples: int) -> None:
        super().__init__()
        self.config = config.validate()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            generator = torch.Generator().manual_seed(config.seed)
            self.dictionary = Dictionary(
                config.M, config.C, config.K, config.alpha, config.masked, generator
            )
            self.net = VelocityNet(config.L, config.d, config.H, config.S)
            self.encoder = (
                ContextEncoder(config.C, config.d, config.n_tasks) if config.conditional else None
            )
            self.logits = nn.Embedding(n_samples, config.M * config.L, sparse=True)
        nn.init.constant_(self.logits.weight, config.logit_init)
        self.to(getattr(torch, config.dtype))

    @property
    def dtype(self) -> torch.dtype:
        return self.dictionary.content.dtype

    @property
    def n_samples(self) -> int:
        return self.logits.num_embeddings

    def forward(
        self,
        x: torch.Tensor,
        logits: torch.Tensor,
        generator: torch.Generator | None = None,
        prefix: torch.Tensor | None = None,
        task: torch.Tensor | None = None,
    ) -> JointLoss:
        return joint_loss(
            self.dictionary,
            self.net,
            x,
            logits,
            self.config,
            generator,
            self.encoder,
            prefix,
            task,
        )

    def placement_logits(self, index: torch.Tensor) -> torch.Tensor:
        return self.logits(index).view(-1, self.dictionary.size, self.config.L)

    def logit_table(self) -> torch.Tensor:
        return self.logits.weight.detach().view(-1, self.dictionary.size, self.config.L)

    def onset_counts(self) -> torch.Tensor:
        """Confident onsets (``q > 0.5``) per atom over the whole logit table."""
        return (self.logit_table() > 0).sum(dim=(0, 2))

    def utilization(self) -> float:
        return float((self.onset_counts() > 0).to(torch.float64).mean())

    def prune(self, min_count: int = 1) -> int:
        """Drop atoms with fewer than ``min_count`` confident onsets. Returns the new size."""
        keep = self.onset_counts() >= min_count
        if bool(keep.all()) or not bool(keep.any()):
            return self.dictionary.size
        table = self.logit_table()[:, keep].reshape(self.n_samples, -1)
        self.dictionary.prune(keep)
        self.logits = nn.Embedding.from_pretrained(table.clone(), freeze=False, sparse=True)
        self.config = self.config.evolve(M=self.dictionary.size)
        return self.dictionary.size

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> CompositionalModel:
        content = ckpt.tensors.get("model.dictionary.content")
        logits = ckpt.tensors.get("model.logits.weight")
        if content is None or logits is None:
            raise ShapeError("checkpoint does not contain a compositional model")
        config = ckpt.config.evolve(M=content.shape[0])
        model = cls(config, logits.shape[0])
        restore_tensors(model.state_dict(), ckpt, "model")
        return model


class Trainer(TrainingDispatcher):
    """Runs :func:`joint_loss` over shuffled mini-batches and updates every parameter group."""

    log: TraceLogger = logging.getLogger("primflow.trainer")

    config: TrainConfig
    model: CompositionalModel
    data: torch.Tensor
    tasks: torch.Tensor | None
    stats: NormStats | None
    lengths: list[int]
    generator: torch.Generator
    validation: np.ndarray | None
    validation_tasks: list[int] | None
    best_val_ade: float | None
    best_epoch: int
    step: int
    epoch: int

    def __init__(
        self,
        config: TrainConfig,
        data: np.ndarray,
        tasks: Sequence[int] | None = None,
        stats: NormStats | None = None,
        lengths: Sequence[int] | None = None,
        model: CompositionalModel | None = None,
        validation: np.ndarray | None = None,
        validation_tasks: Sequence[int] | None = None,
    ) -> None:
        super().__init__()
        self.config = config.validate()
        if data.ndim != 3 or data.shape[1:] != (config.C, config.L):
            raise ShapeError(
                f"expected N x {config.C} x {config.L} training data, got {tuple(data.shape)}"
            )
        self.model = model or CompositionalModel(config, len(data))
        if self.model.n_samples != len(data):
            raise ShapeError(f"{self.model.n_samples} logit rows for {len(data)} samples")
        self.data = torch.as_tensor(np.asarray(data), dtype=self.model.dtype)
        self.tasks = torch.as_tensor(list(tasks), dtype=torch.long) if tasks is not None else None
        self.stats = stats
        self.lengths = list(lengths) if lengths is not None else [config.L] * len(data)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.validation = None
        self.validation_tasks = None
        if validation is not None and len(validation):
            if not config.conditional:
                self.log.warning(
                    f"Ignoring {len(validation)} validation windows, validation ADE needs a "
                    "conditional model (training.obs > 0)"
                )
            elif validation.ndim != 3 or validation.shape[1:] != (config.C, config.L):
                raise ShapeError(
                    f"expected N x {config.C} x {config.L} validation data, "
                    f"got {tuple(validation.shape)}"
                )
            else:
                self.validation = np.asarray(validation, dtype=np.float64)
                if validation_tasks is not None:
                    self.validation_tasks = list(validation_tasks)
        self.best_val_ade = None
        self.best_epoch = 0
        self._best_state: dict[str, torch.Tensor] | None = None
        self.step = 0
        self.epoch = 0
        self._build_optimizers()

    def _build_optimizers(self) -> None:
        model = self.model
        dense = [{"params": model.dictionary.parameters(), "lr": self.config.lr_dict}]
        network = list(model.net.parameters())
        if model.encoder is not None:
            network += list(model.encoder.parameters())
        dense.append({"params": network, "lr": self.config.lr_net})
        self.optimizers = [torch.optim.Adam(dense, betas=(0.9, 0.999))]
        if self.config.lr_logits > 0:
            self.optimizers.append(
                torch.optim.SparseAdam(
                    list(model.logits.parameters()), lr=self.config.lr_logits, betas=(0.9, 0.999)
                )
            )
        else:
            model.logits.weight.requires_grad_(False)

    def _diverged(self, term: str, value: float) -> DivergenceError:
        error = DivergenceError(self.step, term, value)
        self.log.error(f"Training diverged: {error}")
        self.dispatch(TrainingDiverged(error))
        return error

    def train_step(self, index: torch.Tensor) -> JointLoss:
        model, config = self.model, self.config
        x = self.data[index]
        prefix = x[..., : config.obs] if config.conditional else None
        task = self.tasks[index] if self.tasks is not None else None
        for optimizer in self.optimizers:
            optimizer.zero_grad()
        try:
            loss = model(x, model.placement_logits(index), self.generator, prefix, task)
        except NumericalError as e:
            raise self._diverged(e.term, math.nan) from e
        total = float(loss.total.detach())
        if not math.isfinite(total) or total > config.divergence_limit:
            raise self._diverged("total", total)
        loss.total.backward()
        for p in model.parameters():
            if p.grad is not None and not p.grad.is_sparse:
                if not bool(torch.isfinite(p.grad).all()):
                    raise self._diverged("gradient", math.nan)
        for optimizer in self.optimizers:
            optimizer.step()
        self.step += 1
        self.log.debug("Step %d: total %.6f, residual %.6f", self.step, total, loss.fm_residual)
        self.log.trace("Step %d batch indices: %s", self.step, index.tolist())
        return loss

    @torch.no_grad()
    def validate(self) -> float:
        """
        Mean ADE of the validation windows' predicted futures.

        Prefixes are the first ``obs`` steps of each window. Errors are in data units when
        normalization statistics are known. Sampling uses the configured Euler steps and
        guidance with a fixed seed, so epochs are compared on the same noise.
        """
        if self.validation is None:
            raise ValueError("no validation windows were given")
        model, config = self.model, self.config
        results = predict_batch(
            model.net,
            model.dictionary,
            self.validation[..., : config.obs],
            model.encoder,
            self.validation_tasks,
            config.euler_steps,
            config.guidance,
            config.seed,
            config.sigma,
            self.stats,
        )
        futures = self.validation[..., config.obs :]
        if self.stats is not None:
            futures = denormalize_array(futures, self.stats)
        return metric_report([future for future, _, _ in results], list(futures)).ade

    def _track_validation(self, val_ade: float) -> int:
        """Remember the best epoch. Returns the number of epochs since it."""
        if self.best_val_ade is None or val_ade < self.best_val_ade:
            self.best_val_ade = val_ade
            self.best_epoch = self.epoch
            if self.config.keep_best:
                self._best_state = {
                    name: value.detach().clone()
                    for name, value in self.model.state_dict().items()
                }
        return self.epoch - self.best_epoch

    def run(
        self, epochs: int | None = None, checkpoint_path: str | Path | None = None
    ) -> Checkpoint:
        """
        Train for ``epochs`` (default: the configured count) and return the final checkpoint.

        When ``checkpoint_path`` is given, a checkpoint is written after every epoch. A
        divergence raises before the next write, so the file keeps the last good state.

        With validation windows the validation ADE is measured after every epoch.
        ``patience`` stops training early and ``keep_best`` restores the weights of the best
        epoch before the final checkpoint. The step counter is not rolled back.
        """
        epochs = self.config.epochs if epochs is None else epochs
        if self.config.deterministic:
            torch.set_num_threads(1)
        self.dispatch(TrainingStarted(self.config, len(self.data), self.step))
        self.log.info(
            f"Training {self.model.dictionary.size} atoms on {len(self.data)} samples "
            f"for {epochs} epochs"
        )
        for _ in range(epochs):
            order = torch.randperm(len(self.data), generator=self.generator)
            batches = order.split(self.config.batch_size)
            parts = [self.train_step(batch).breakdown() for batch in batches]
            self.epoch += 1
            metrics = EpochMetrics(
                epoch=self.epoch,
                step=self.step,
                loss=average_breakdown(parts),
                utilization=self.model.utilization(),
                val_ade=self.validate() if self.validation is not None else None,
            )
            loss = metrics.loss
            self.log.info(
                f"Epoch {self.epoch}: total {loss.total:.5f} | dec rec {loss.psi_dec.rec:.5f} "
                f"sparse {loss.psi_dec.sparse:.3f} prim {loss.psi_dec.prim:.4f} "
                f"geo {loss.psi_dec.geo:.4f} | fm {loss.fm_residual:.5f} "
                f"| flow {loss.psi_flow.total:.5f} | utilization {metrics.utilization:.2f}"
                + (f" | val ADE {metrics.val_ade:.5f}" if metrics.val_ade is not None else "")
            )
            self.dispatch(EpochFinished(metrics))
            if checkpoint_path:
                self.save(checkpoint_path)
            if metrics.val_ade is not None:
                stale = self._track_validation(metrics.val_ade)
                if self.config.patience and stale >= self.config.patience:
                    self.log.info(
                        f"Stopping early, no better validation ADE for {stale} epochs "
                        f"(best {self.best_val_ade:.5f} at epoch {self.best_epoch})"
                    )
                    break
        if self._best_state is not None and self.best_epoch != self.epoch:
            self.log.info(
                f"Restoring the weights of epoch {self.best_epoch} "
                f"(validation ADE {self.best_val_ade:.5f})"
            )
            self.model.load_state_dict(self._best_state)
            if checkpoint_path:
                self.save(checkpoint_path)
        if self.config.prune:
            size = self.model.prune(self.config.prune_min_count)
            if size != self.config.M:
                self.log.info(f"Pruned dictionary to {size} atoms")
                self.config = self.model.config
                self._build_optimizers()
                if checkpoint_path:
                    self.save(checkpoint_path)
        return self.checkpoint()

    def checkpoint(self) -> Checkpoint:
        tensors = {
            f"model.{name}": value.detach().clone()
            for name, value in self.model.state_dict().items()
        }
        if self.stats is not None:
            tensors["stats.mean"] = torch.as_tensor(np.asarray(self.stats.mean, dtype=np.float64))
            tensors["stats.std"] = torch.as_tensor(np.asarray(self.stats.std, dtype=np.float64))
        tensors["data.lengths"] = torch.as_tensor(self.lengths, dtype=torch.int64)
        if self.tasks is not None:
            tensors["data.tasks"] = self.tasks.clone()
        tensors["rng.state"] = self.generator.get_state()
        return Checkpoint(config=self.model.config, tensors=tensors, step=self.step)

    def save(self, path: str | Path) -> None:
        save_checkpoint(self.checkpoint(), path)
        self.dispatch(CheckpointSaved(Path(path), self.step))

    @classmethod
    def resume(
        cls,
        ckpt: Checkpoint,
        data: np.ndarray,
        validation: np.ndarray | None = None,
        validation_tasks: Sequence[int] | None = None,
    ) -> Trainer:
        """Continue training from ``ckpt``, including its step counter and rng state."""
        model = CompositionalModel.from_checkpoint(ckpt)
        tasks = ckpt.tensors.get("data.tasks")
        lengths = ckpt.tensors.get("data.lengths")
        trainer = cls(
            model.config,
            data,
            tasks.tolist() if tasks is not None else None,
            stats_from_checkpoint(ckpt),
            lengths.tolist() if lengths is not None else None,
            model,
            validation,
            validation_tasks,
        )
        trainer.step = ckpt.step
        if ckpt.rng_state is not None:
            trainer.generator.set_state(ckpt.rng_state)
        return trainer


def stats_from_checkpoint(ckpt: Checkpoint) -> NormStats | None:
    if "stats.mean" not in ckpt.tensors:
        return None
    std = ckpt.tensors["stats.std"].numpy()
    return NormStats(
        mean=Vector(ckpt.tensors["stats.mean"].numpy()),
        std=Vector(std),
        clamped=[False] * len(std),
    )


def _average_energy(items: Sequence[EnergyBreakdown]) -> EnergyBreakdown:
    n = len(items)
    return EnergyBreakdown(
        rec=sum(e.rec for e in items) / n,
        sparse=sum(e.sparse for e in items) / n,
        prim=sum(e.prim for e in items) / n,
        geo=sum(e.geo for e in items) / n,
        total=sum(e.total for e in items) / n,
    )


def average_breakdown(items: Sequence[LossBreakdown]) -> LossBreakdown:
    n = len(items)
    return LossBreakdown(
        psi_dec=_average_energy([b.psi_dec for b in items]),
        fm_residual=sum(b.fm_residual for b in items) / n,
        psi_flow=_average_energy([b.psi_flow for b in items]),
        total=sum(b.total for b in items) / n,
    )


def _frozen_atoms(dictionary: Dictionary) -> EffectiveAtom:
    return EffectiveAtom._make(t.detach() for t in dictionary())


def infer_logits(
    model: CompositionalModel,
    x: torch.Tensor,
    steps: int = 200,
    lr: float = 0.05,
    seed: int = 0,
) -> torch.Tensor:
    """
    Fit fresh placement logits for held-out trajectories with the dictionary frozen.

    This is a reconstruction diagnostic. Conditional prediction never needs it.
    """
    config = model.config
    params = GeoParams.from_config(config)
    atoms = _frozen_atoms(model.dictionary)
    gamma = model.dictionary.gamma.detach()
    generator = torch.Generator().manual_seed(seed)
    logits = torch.full(
        (x.shape[0], model.dictionary.size, config.L), config.logit_init, dtype=x.dtype
    ).requires_grad_(True)
    optimizer = torch.optim.Adam([logits], lr=lr)
    for _ in range(steps):
        optimizer.zero_grad()
        placement = sample_placements(logits, generator)
        loss = energy(placement.binary, x, atoms, gamma, params, placement.probs).total.mean()
        loss.backward()
        optimizer.step()
    return logits.detach()


@torch.no_grad()
def reconstruct(
    model: CompositionalModel, logits: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Decode the confident placements (``q >= 0.5``) of ``logits``. Returns ``(x_hat, R)``."""
    R = (logits >= 0).to(model.dtype)
    x_hat, _ = compose(R, model.dictionary(), model.dictionary.gamma, torch.sigmoid(logits))
    return x_hat, R


TINY = TrainConfig(M=3, K=6, L=16, C=2, d=8, H=2, S=1, dtype="float64")


def tiny_instance(
    seed: int = 7, batch: int = 2, config: TrainConfig = TINY
) -> tuple[CompositionalModel, torch.Tensor, torch.Tensor]:
    """
    A small float64 model with a random batch and random logits.

    The network's zero-initialized projections are randomized so every parameter has a
    nonzero gradient.
    """
    config = config.evolve(seed=seed, dtype="float64")
    model = CompositionalModel(config, batch)
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.net.named_parameters():
            if name.startswith("out_proj") or ".modulation." in name:
                p.copy_(0.3 * torch.randn(p.shape, generator=generator, dtype=p.dtype))
        model.dictionary.gamma.copy_(0.1 * torch.randn(config.M, generator=generator))
    x = torch.randn(batch, config.C, config.L, generator=generator, dtype=torch.float64)
    logits = torch.randn(batch, config.M, config.L, generator=generator, dtype=torch.float64)
    return model, x, logits


def gradient_suite(seed: int = 7, eps: float = 1e-5) -> dict[str, GradReport]:
    """
    Finite-difference checks of every legality term, the flow loss and the joint loss.

    Everything runs relaxed, in float64, on :func:`tiny_instance`. Each evaluation replays
    the same random draws.
    """
    model, x, logits = tiny_instance(seed)
    config = model.config
    params = GeoParams.from_config(config)
    dictionary_params = {
        f"dictionary.{name}": p.detach() for name, p in model.dictionary.named_parameters()
    }
    net_params = {f"net.{name}": p.detach() for name, p in model.net.named_parameters()}

    def joint(named: dict[str, torch.Tensor]) -> JointLoss:
        weights = {k: v for k, v in named.items() if k != "logits"}
        generator = torch.Generator().manual_seed(seed)
        return functional_call(model, weights, (x, named.get("logits", logits), generator))

    def term(name: str) -> Callable[[dict[str, torch.Tensor]], torch.Tensor]:
        def evaluate(named: dict[str, torch.Tensor]) -> torch.Tensor:
            generator = torch.Generator().manual_seed(seed)
            weights = {k.removeprefix("dictionary."): v for k, v in named.items() if k != "logits"}
            atoms = functional_call(model.dictionary, weights, ())
            placement = sample_placements(named["logits"], generator)
            terms = energy(placement.binary, x, atoms, weights["gamma"], params, placement.probs)
            return getattr(terms, name).sum()

        return evaluate

    reports = {}
    with relaxed():
        for name in ("rec", "sparse", "prim", "geo"):
            reports[name], _ = grad_check_named(
                term(name), {**dictionary_params, "logits": logits}, eps
            )

        def flow(named: dict[str, torch.Tensor]) -> torch.Tensor:
            loss = joint(named)
            return loss.fm_residual + config.beta * loss.flow.total

        reports["flow"], _ = grad_check_named(flow, net_params, eps)
        reports["joint"], _ = grad_check_named(
            lambda named: joint(named).total,
            {**dictionary_params, **net_params, "logits": logits},
            eps,
        )
    return reports
