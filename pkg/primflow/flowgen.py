# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""
Structural sparse flow matching over placement matrices.

The flow transports Gaussian noise ``Z0`` along the straight path
``Zt = (1 - t) Z0 + t R1`` to a placement matrix ``R1``. The velocity network treats the M
dictionary rows as tokens. It is told each atom's duration but gets no positional
information about the rows, so the atom order carries no meaning.
"""
from __future__ import annotations

from typing import NamedTuple, Protocol, Sequence
import logging
import math

import numpy as np
import torch
from torch import nn

from .errors import IntegrationError, ShapeError
from .primdict import Dictionary, compose
from .trajdata import denormalize_array
from .types import Matrix, NormStats, Prediction, PredictionMeta

log = logging.getLogger("primflow.flowgen")


class FlowState(NamedTuple):
    Z0: torch.Tensor
    t: torch.Tensor
    Zt: torch.Tensor
    target_vel: torch.Tensor
    sigma: float


class ContextVector(NamedTuple):
    h: torch.Tensor
    null: bool = False


class VectorField(Protocol):
    def __call__(
        self,
        Zt: torch.Tensor,
        t: torch.Tensor,
        widths: torch.Tensor,
        h: torch.Tensor | None = None,
    ) -> torch.Tensor:
        ...


def _time_like(t: torch.Tensor | float, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=like.dtype, device=like.device)
    return t.reshape(*t.shape, 1, 1) if t.dim() > 0 else t


def sample_noise(
    shape: Sequence[int],
    sigma: float = 1.0,
    generator: torch.Generator | None = None,
    dtype: torch.dtype | None = None,
) -> torch.Tensor:
    return sigma * torch.randn(*shape, generator=generator, dtype=dtype)


def interpolate(
    Z0: torch.Tensor, R1: torch.Tensor, t: torch.Tensor | float, sigma: float = 1.0
) -> FlowState:
    """Point on the straight noise-to-placement path and its (time-independent) velocity."""
    if Z0.shape != R1.shape:
        raise ShapeError(f"noise {tuple(Z0.shape)} and target {tuple(R1.shape)} differ")
    tt = _time_like(t, Z0)
    Zt = (1 - tt) * Z0 + tt * R1
    return FlowState(
        Z0=Z0, t=torch.as_tensor(t, dtype=Z0.dtype), Zt=Zt, target_vel=R1 - Z0, sigma=sigma
    )


def endpoint_estimate(
    Zt: torch.Tensor, t: torch.Tensor | float, v: torch.Tensor
) -> torch.Tensor:
    """One-shot estimate of the clean endpoint, ``Zt + (1 - t) v``."""
    tt = _time_like(t, Zt)
    estimate = Zt + (1 - tt) * v
    return torch.where(tt >= 1, Zt, estimate)


def sinusoidal(x: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=x.dtype, device=x.device) / half
    )
    args = x.unsqueeze(-1) * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class SelfAttention(nn.Module):
    def __init__(self, d: int, heads: int) -> None:
        super().__init__()
        if d % heads != 0:
            raise ValueError(f"model dim {d} is not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = d // heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out_proj = nn.Linear(d, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).view(b, n, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        ctx = torch.softmax(att, dim=-1) @ v
        return self.out_proj(ctx.transpose(1, 2).reshape(b, n, d))


class AdaLNBlock(nn.Module):
    """Pre-norm attention + MLP block whose norms are shifted and scaled by a condition."""

    def __init__(self, d: int, heads: int) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(d, elementwise_affine=False)
        self.attn = SelfAttention(d, heads)
        self.norm2 = nn.LayerNorm(d, elementwise_affine=False)
        self.mlp = nn.Sequential(nn.Linear(d, 4 * d), nn.GELU(), nn.Linear(4 * d, d))
        self.modulation = nn.Linear(d, 4 * d)
        nn.init.zeros_(self.modulation.weight)
        nn.init.zeros_(self.modulation.bias)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        shift1, scale1, shift2, scale2 = self.modulation(cond).unsqueeze(1).chunk(4, dim=-1)
        x = x + self.attn(self.norm1(x) * (1 + scale1) + shift1)
        return x + self.mlp(self.norm2(x) * (1 + scale2) + shift2)


class VelocityNet(nn.Module):
    """
    Duration-aware transformer velocity field over the M rows of a placement matrix.

    Token j starts as ``Linear(Zt[j]) + psi(w_j) + MLP(t)``, where ``psi`` embeds the soft
    width sinusoidally. S AdaLN blocks follow, conditioned on the time embedding plus the
    projected context vector. A zero-initialized projection maps each token back to L values.
    """

    def __init__(self, L: int, d: int = 64, heads: int = 4, blocks: int = 3, width_dim: int = 16):
        super().__init__()
        self.L = L
        self.d = d
        self.width_dim = width_dim
        self.token_proj = nn.Linear(L, d)
        self.width_proj = nn.Linear(width_dim, d)
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.context_proj = nn.Linear(d, d)
        self.blocks = nn.ModuleList(AdaLNBlock(d, heads) for _ in range(blocks))
        self.norm_out = nn.LayerNorm(d, elementwise_affine=False)
        self.out_proj = nn.Linear(d, L)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    def forward(
        self,
        Zt: torch.Tensor,
        t: torch.Tensor | float,
        widths: torch.Tensor,
        h: torch.Tensor | None = None,
    ) -> torch.Tensor:
        if Zt.shape[-1] != self.L:
            raise ShapeError(f"expected placements of length {self.L}, got {Zt.shape[-1]}")
        squeeze = Zt.dim() == 2
        if squeeze:
            Zt = Zt.unsqueeze(0)
        B, M, _ = Zt.shape
        if widths.shape[-1] != M:
            raise ShapeError(f"{M} placement rows but {widths.shape[-1]} widths")
        t = torch.as_tensor(t, dtype=Zt.dtype, device=Zt.device).reshape(-1).expand(B)

        temb = self.time_mlp(sinusoidal(t * 1000, self.d))
        psi = self.width_proj(sinusoidal(widths.to(Zt.dtype), self.width_dim, 100.0))
        tokens = self.token_proj(Zt) + psi.expand(B, M, self.d) + temb.unsqueeze(1)
        cond = temb
        if h is not None:
            cond = cond + self.context_proj(h.reshape(-1, self.d).expand(B, self.d))
        for block in self.blocks:
            tokens = block(tokens, cond)
        out = self.out_proj(self.norm_out(tokens))
        return out.squeeze(0) if squeeze else out


def velocity_forward(
    net: VelocityNet,
    Zt: torch.Tensor,
    t: torch.Tensor | float,
    widths: torch.Tensor,
    h: ContextVector | torch.Tensor | None = None,
) -> torch.Tensor:
    if isinstance(h, ContextVector):
        h = h.h
    return net(Zt, t, widths, h)


class ContextEncoder(nn.Module):
    """Mean-pooled per-timestep embedding of an observed prefix plus a task embedding."""

    def __init__(self, C: int, d: int, n_tasks: int = 0) -> None:
        super().__init__()
        self.d = d
        self.proj = nn.Linear(C, d)
        self.task_embed = nn.Embedding(n_tasks, d) if n_tasks > 0 else None
        self.null = nn.Parameter(0.02 * torch.randn(d))
        self._ignored_tasks = False

    def forward(self, prefix: torch.Tensor, task: torch.Tensor | None = None) -> torch.Tensor:
        # prefix: B x C x T_obs
        if prefix.shape[-1] < 1:
            raise ShapeError("the observed prefix needs at least one timestep")
        steps = torch.arange(prefix.shape[-1], dtype=prefix.dtype, device=prefix.device)
        x = self.proj(prefix.transpose(-1, -2)) + sinusoidal(steps, self.d)
        h = x.mean(dim=-2)
        if task is not None:
            if self.task_embed is not None:
                h = h + self.task_embed(task)
            elif not self._ignored_tasks:
                self._ignored_tasks = True
                log.warning("Ignoring task labels, the context encoder has no task embedding")
        return h

    def null_context(self, batch: int = 1) -> torch.Tensor:
        return self.null.unsqueeze(0).expand(batch, self.d)


def encode_context(
    encoder: ContextEncoder,
    prefix: torch.Tensor | None,
    task: torch.Tensor | None = None,
    null: bool = False,
) -> ContextVector:
    if null or prefix is None:
        batch = 1 if prefix is None or prefix.dim() == 2 else prefix.shape[0]
        return ContextVector(h=encoder.null_context(batch), null=True)
    squeeze = prefix.dim() == 2
    h = encoder(prefix.unsqueeze(0) if squeeze else prefix, task)
    return ContextVector(h=h, null=False)


def cfg_combine(v_cond: torch.Tensor, v_uncond: torch.Tensor, g: float) -> torch.Tensor:
    if v_cond.shape != v_uncond.shape:
        raise ShapeError(
            f"guidance branches differ: {tuple(v_cond.shape)}, {tuple(v_uncond.shape)}"
        )
    return v_uncond + g * (v_cond - v_uncond)


@torch.no_grad()
def integrate(
    net: VectorField,
    Z0: torch.Tensor,
    steps: int,
    widths: torch.Tensor,
    h: torch.Tensor | None = None,
    g: float = 1.0,
    null: torch.Tensor | None = None,
) -> torch.Tensor:
    """
    Explicit Euler from t=0 to t=1 on the grid ``i / steps``.

    With a context ``h`` and a null context, each step combines the conditional and
    unconditional velocities with guidance scale ``g``.

    Raises:
        IntegrationError: The state stopped being finite. The error names the step.
    """
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    z = Z0
    dt = 1.0 / steps
    batch = Z0.shape[0] if Z0.dim() == 3 else 1
    for i in range(steps):
        t = torch.full((batch,), i / steps, dtype=Z0.dtype, device=Z0.device)
        v = net(z, t, widths, h)
        if h is not None and null is not None and g != 1.0:
            v = cfg_combine(v, net(z, t, widths, null), g)
        z = z + dt * v
        if not bool(torch.isfinite(z).all()):
            raise IntegrationError(i + 1)
    return z


def binarize(Z1: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
    return (Z1 >= threshold).to(Z1.dtype)


def _param_dtype(module: nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype


@torch.no_grad()
def generate_placements(
    net: VelocityNet,
    dictionary: Dictionary,
    batch: int,
    steps: int = 50,
    g: float = 1.5,
    seed: int = 0,
    sigma: float = 1.0,
    h: torch.Tensor | None = None,
    null: torch.Tensor | None = None,
    threshold: float = 0.5,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Integrate the flow and decode the binarized endpoint.

    Returns:
        The binarized placements, the raw endpoints and the synthesized ``B x C x L``
        trajectories (in normalized units).
    """
    dtype = _param_dtype(net)
    generator = torch.Generator().manual_seed(seed)
    atoms = dictionary()
    Z0 = sample_noise((batch, dictionary.size, net.L), sigma, generator, dtype)
    Z1 = integrate(net, Z0, steps, atoms.soft_width, h, g, null)
    R = binarize(Z1, threshold)
    x_hat, _ = compose(R, atoms, dictionary.gamma, Z1.clamp(0, 1))
    return R, Z1, x_hat


@torch.no_grad()
def predict_batch(
    net: VelocityNet,
    dictionary: Dictionary,
    prefixes: np.ndarray,
    encoder: ContextEncoder | None = None,
    tasks: Sequence[int] | None = None,
    steps: int = 50,
    g: float = 1.5,
    seed: int = 0,
    sigma: float = 1.0,
    stats: NormStats | None = None,
    threshold: float = 0.5,
) -> list[tuple[np.ndarray, bool, int]]:
    """
    Predict the futures of a batch of normalized ``B x C x T_obs`` prefixes.

    Returns one ``(future, fallback, n_events)`` triple per prefix. ``future`` is
    ``C x (L - T_obs)`` in data units when ``stats`` is given. When the binarized placement is
    empty the last observed point is held constant and ``fallback`` is set.
    """
    dtype = _param_dtype(net)
    B, _, obs = prefixes.shape
    if obs >= net.L:
        raise ShapeError(f"prefix of {obs} steps leaves no future in a timeline of {net.L}")
    prefix_t = torch.as_tensor(prefixes, dtype=dtype)
    h = null = None
    if encoder is not None:
        task_t = torch.as_tensor(list(tasks), dtype=torch.long) if tasks is not None else None
        h = encoder(prefix_t, task_t)
        null = encoder.null_context(B)
    R, _, x_hat = generate_placements(
        net, dictionary, B, steps, g, seed, sigma, h, null, threshold
    )
    results = []
    for i in range(B):
        n_events = int(R[i].sum())
        future = x_hat[i, :, obs:].double().numpy()
        fallback = n_events == 0
        if fallback:
            log.debug("Empty placement for sample %d", i)
            future = np.repeat(prefixes[i, :, -1:], net.L - obs, axis=1).astype(np.float64)
        if stats is not None:
            future = denormalize_array(future, stats)
        results.append((future, fallback, n_events))
    empty = sum(fallback for _, fallback, _ in results)
    if empty:
        log.warning(
            "Empty placement for %d of %d samples, holding the last observed point", empty, B
        )
    return results


def predict(
    net: VelocityNet,
    dictionary: Dictionary,
    prefix: np.ndarray,
    task: int | None = None,
    steps: int = 50,
    g: float = 1.5,
    seed: int = 0,
    encoder: ContextEncoder | None = None,
    stats: NormStats | None = None,
    source_id: str = "",
    offset: int = 0,
    sigma: float = 1.0,
) -> Prediction:
    """Predict the future of one normalized ``C x T_obs`` prefix."""
    tasks = [task] if task is not None else None
    ((future, fallback, n_events),) = predict_batch(
        net, dictionary, prefix[None], encoder, tasks, steps, g, seed, sigma, stats
    )
    meta = PredictionMeta(source_id=source_id, offset=offset, n_events=n_events, fallback=fallback)
    return Prediction(future=Matrix(future), meta=meta)


def sample_trajectories(
    net: VelocityNet,
    dictionary: Dictionary,
    n: int,
    steps: int = 50,
    seed: int = 0,
    sigma: float = 1.0,
    encoder: ContextEncoder | None = None,
    lengths: Sequence[int] | None = None,
    stats: NormStats | None = None,
) -> list[np.ndarray]:
    """
    Generate ``n`` unconditional trajectories.

    Each trajectory's length is drawn from ``lengths`` (the empirical training lengths,
    clipped to L) when given, otherwise it spans the full timeline.
    """
    null = encoder.null_context(n) if encoder is not None else None
    _, _, x_hat = generate_placements(net, dictionary, n, steps, 1.0, seed, sigma, null, None)
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        points = x_hat[i].double().numpy()
        if lengths:
            length = int(min(rng.choice(np.asarray(lengths)), net.L))
            points = points[:, : max(length, 2)]
        if stats is not None:
            points = denormalize_array(points, stats)
        out.append(points)
    return out
