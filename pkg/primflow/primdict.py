# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""
Motion-primitive dictionary: anchored masked atoms, straight-through Bernoulli placements,
the per-timestep winner-take-all gate and compositional synthesis.
"""
from __future__ import annotations

from typing import NamedTuple
import logging

import torch
from torch import nn
import torch.nn.functional as F

from .diffcore import is_relaxed, st_bernoulli, st_round, straight_through
from .errors import ShapeError

log = logging.getLogger("primflow.primdict")


class Atom(NamedTuple):
    # C x K (or M x C x K for a whole dictionary)
    content: torch.Tensor
    width_param: torch.Tensor
    gate_priority: torch.Tensor


class EffectiveAtom(NamedTuple):
    content: torch.Tensor
    soft_width: torch.Tensor
    width: torch.Tensor
    mask: torch.Tensor

    @property
    def extent(self) -> int:
        return self.content.shape[-1]

    @property
    def hard_width(self) -> torch.Tensor:
        """Integer widths in ``[1, K]`` without any gradient."""
        return torch.floor(self.width.detach() + 0.5).long().clamp(1, self.extent)

    @property
    def start_points(self) -> torch.Tensor:
        return self.content[..., 0]

    @property
    def end_points(self) -> torch.Tensor:
        """The column at ``width - 1``, linearly interpolated when the width is fractional."""
        return column_at(self.content, self.width - 1)


class PlacementState(NamedTuple):
    logits: torch.Tensor
    probs: torch.Tensor
    binary: torch.Tensor
    gate: torch.Tensor | None = None


def _as_tensor(value: torch.Tensor | float) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value
    return torch.tensor(value, dtype=torch.get_default_dtype())


def soft_width(phi: torch.Tensor | float, K: int) -> torch.Tensor:
    if K < 2:
        raise ValueError(f"K must be at least 2, got {K}")
    return 1 + (K - 1) * torch.sigmoid(_as_tensor(phi))


def length_mask(w: torch.Tensor | float, K: int, alpha: float) -> torch.Tensor:
    """Sharpened-sigmoid mask ``m_s = sigmoid(alpha * (w - s - 1/2))`` for ``s < K``."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    w = _as_tensor(w)
    s = torch.arange(K, dtype=w.dtype, device=w.device)
    return torch.sigmoid(alpha * (w.unsqueeze(-1) - s - 0.5))


def column_at(content: torch.Tensor, pos: torch.Tensor) -> torch.Tensor:
    K = content.shape[-1]
    pos = pos.clamp(0, K - 1)
    lower = torch.floor(pos.detach()).long().clamp(0, max(K - 2, 0))
    frac = (pos - lower).unsqueeze(-1)
    index = lower.unsqueeze(-1).unsqueeze(-1).expand(*content.shape[:-1], 1)
    left = content.gather(-1, index).squeeze(-1)
    if K == 1:
        return left
    right = content.gather(-1, index + 1).squeeze(-1)
    return left + frac * (right - left)


def effective_atom(atom: Atom, alpha: float, masked: bool = True) -> EffectiveAtom:
    """
    Mask an atom (or a whole dictionary) by its soft width.

    Without ``masked`` the mask is all ones and the width is pinned to ``K``.
    """
    content = atom.content
    K = content.shape[-1]
    if masked:
        w = soft_width(atom.width_param, K).to(content.dtype)
        mask = length_mask(w, K, alpha)
    else:
        w = torch.full_like(atom.width_param, float(K), dtype=content.dtype)
        mask = torch.ones(*w.shape, K, dtype=content.dtype, device=content.device)
    return EffectiveAtom(
        content=content * mask.unsqueeze(-2),
        soft_width=w,
        width=st_round(w),
        mask=mask,
    )


class Dictionary(nn.Module):
    """M atoms of extent K over C channels, each with a width and a gate priority."""

    content: nn.Parameter
    phi: nn.Parameter
    gamma: nn.Parameter

    def __init__(
        self,
        M: int,
        C: int,
        K: int,
        alpha: float = 10.0,
        masked: bool = True,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        if K < 2:
            raise ValueError(f"K must be at least 2, got {K}")
        self.alpha = alpha
        self.masked = masked
        self.content = nn.Parameter(0.1 * torch.randn(M, C, K, generator=generator))
        self.phi = nn.Parameter(torch.randn(M, generator=generator))
        self.gamma = nn.Parameter(torch.zeros(M))

    @property
    def size(self) -> int:
        return self.content.shape[0]

    @property
    def extent(self) -> int:
        return self.content.shape[-1]

    def atom(self, j: int) -> Atom:
        return Atom(self.content[j], self.phi[j], self.gamma[j])

    def forward(self) -> EffectiveAtom:
        return effective_atom(Atom(self.content, self.phi, self.gamma), self.alpha, self.masked)

    @torch.no_grad()
    def prune(self, keep: torch.Tensor) -> None:
        """Drop atoms whose ``keep`` flag is false. Optimizers must be rebuilt afterwards."""
        keep = keep.to(torch.bool)
        if not bool(keep.any()):
            log.warning("Refusing to prune every atom, keeping the dictionary as-is")
            return
        log.info("Pruning dictionary from %d to %d atoms", self.size, int(keep.sum()))
        self.content = nn.Parameter(self.content[keep].clone())
        self.phi = nn.Parameter(self.phi[keep].clone())
        self.gamma = nn.Parameter(self.gamma[keep].clone())


def sample_placements(
    logits: torch.Tensor, generator: torch.Generator | None = None
) -> PlacementState:
    """Draw binary onsets with the straight-through Bernoulli estimator."""
    probs = torch.sigmoid(logits)
    return PlacementState(logits=logits, probs=probs, binary=st_bernoulli(probs, generator))


def gate_scores(probs: torch.Tensor, gamma: torch.Tensor) -> torch.Tensor:
    """Winner-take-all score of each onset: its probability plus the atom's priority."""
    return probs + gamma.unsqueeze(-1)


def covering(widths: torch.Tensor, L: int) -> torch.Tensor:
    """``cover[j, k, t]`` is true when an onset of atom j at k covers timestep t."""
    steps = torch.arange(L, device=widths.device)
    offset = steps.unsqueeze(0) - steps.unsqueeze(1)
    return (offset >= 0).unsqueeze(0) & (offset.unsqueeze(0) < widths.view(-1, 1, 1))


def wta_gate(
    R: torch.Tensor, widths: torch.Tensor, scores: torch.Tensor, eps: float = 1e-6
) -> torch.Tensor:
    """
    Assign every covered timestep to exactly one atom.

    The winner at t is the active onset whose interval covers t with the highest score.
    Ties go to the lowest atom index, then the earliest onset. The forward value is the hard
    one-hot gate. The gradient is that of a softmax over the covering candidates' scores.

    Args:
        R: ``(..., M, L)`` placements. Entries above ``eps`` are active onsets.
        widths: ``(M,)`` integer widths.
        scores: ``(..., M, L)`` onset scores, see :func:`gate_scores`.
    """
    M, L = R.shape[-2:]
    if widths.shape != (M,):
        raise ShapeError(f"expected {M} widths, got shape {tuple(widths.shape)}")
    batch = R.shape[:-2]
    active = R.detach() > eps
    candidates = (active.unsqueeze(-1) & covering(widths.long(), L)).reshape(*batch, M * L, L)
    covered = candidates.any(dim=-2)

    expanded = scores.reshape(*batch, M * L, 1).expand(*batch, M * L, L)
    masked = expanded.masked_fill(~candidates, float("-inf"))
    masked = masked.masked_fill(~covered.unsqueeze(-2), 0.0)
    soft = torch.softmax(masked, dim=-2) * candidates
    soft = soft.reshape(*batch, M, L, L).sum(dim=-2)

    winner = torch.argmax(masked.detach(), dim=-2) // L
    hard = F.one_hot(winner, M).transpose(-1, -2).to(R.dtype) * covered.unsqueeze(-2)
    return straight_through(hard, soft)


def synthesize(R: torch.Tensor, atoms: EffectiveAtom, gate: torch.Tensor) -> torch.Tensor:
    """
    Compose placements into a ``(..., C, L)`` trajectory.

    Each onset k of atom j copies columns ``0..w_j-1`` of the effective atom to timeline
    columns ``k..k+w_j-1`` (clipped at L). The per-atom superposition is then multiplied by
    the gate, so every covered timestep takes the value of its owning atom.
    """
    M, L = R.shape[-2:]
    content = atoms.content
    if content.shape[0] != M or gate.shape[-2:] != (M, L):
        raise ShapeError(
            f"placements {tuple(R.shape)}, atoms {tuple(content.shape)} and gate "
            f"{tuple(gate.shape)} disagree"
        )
    C, K = content.shape[-2:]
    if not is_relaxed():
        window = torch.arange(K, device=content.device) < atoms.hard_width.unsqueeze(-1)
        content = content * window.unsqueeze(-2)
    batch = R.shape[:-2]
    flat = R.reshape(-1, M, L)
    weight = content.flip(-1).reshape(M * C, 1, K)
    shifted = F.conv1d(F.pad(flat, (K - 1, 0)), weight, groups=M).view(-1, M, C, L)
    out = (shifted * gate.reshape(-1, M, 1, L)).sum(dim=1)
    return out.view(*batch, C, L)


def compose(
    R: torch.Tensor,
    atoms: EffectiveAtom,
    gamma: torch.Tensor,
    probs: torch.Tensor | None = None,
    eps: float = 1e-6,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Gate and synthesize placements. Returns the trajectory and the gate."""
    probs = R.clamp(0, 1) if probs is None else probs
    gate = wta_gate(R, atoms.hard_width, gate_scores(probs, gamma), eps)
    return synthesize(R, atoms, gate), gate
