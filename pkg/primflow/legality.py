# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""
Placement legality energy.

Ψ = Ψ_rec + λ_s Ψ_sparse + λ_p Ψ_prim + λ_g Ψ_geo, evaluated on a placement matrix R
(binary from the dictionary side, continuous from the flow endpoint). Every function
accepts leading batch dimensions and returns one value per sample.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence
import itertools
import logging

from attr import dataclass
import torch

from .diffcore import smooth_relu, st_abs, straight_through
from .errors import OracleLimitError
from .primdict import EffectiveAtom, compose, synthesize
from .types import EnergyBreakdown, TrainConfig

log = logging.getLogger("primflow.legality")

BRUTEFORCE_LIMIT = 12


@dataclass
class GeoParams:
    eta: float = 0.1
    rho: float = 1.0
    tau: float = 0.1
    lambda_s: float = 0.1
    lambda_p: float = 0.1
    lambda_g: float = 1.0
    beta_ovl: float = 20.0
    delta: float = 1e-3
    eps_event: float = 1e-6

    def __attrs_post_init__(self) -> None:
        for name in ("eta", "rho", "tau", "lambda_s", "lambda_p", "lambda_g"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_config(cls, config: TrainConfig) -> GeoParams:
        return cls(
            eta=config.eta,
            rho=config.rho,
            tau=config.tau,
            lambda_s=config.lambda_s,
            lambda_p=config.lambda_p,
            lambda_g=config.lambda_g,
            beta_ovl=config.beta_ovl,
            delta=config.delta_abs,
            eps_event=config.eps_event,
        )


class Event(NamedTuple):
    atom: int
    onset: int
    prob: torch.Tensor
    # straight-through integer width and the soft width it came from
    width: torch.Tensor
    soft_width: torch.Tensor
    start: torch.Tensor
    end: torch.Tensor

    @property
    def hard_width(self) -> int:
        return int(torch.floor(self.width.detach() + 0.5))

    @property
    def offset(self) -> int:
        return self.onset + self.hard_width

    @property
    def interval(self) -> tuple[int, int]:
        return self.onset, self.offset


class EnergyTerms(NamedTuple):
    rec: torch.Tensor
    sparse: torch.Tensor
    prim: torch.Tensor
    geo: torch.Tensor
    total: torch.Tensor

    def mean(self) -> EnergyTerms:
        return EnergyTerms(*(term.mean() for term in self))

    def report(self) -> EnergyBreakdown:
        means = self.mean()
        return EnergyBreakdown(
            rec=float(means.rec),
            sparse=float(means.sparse),
            prim=float(means.prim),
            geo=float(means.geo),
            total=float(means.total),
        )


def extract_events(R: torch.Tensor, atoms: EffectiveAtom, eps: float = 1e-6) -> list[Event]:
    """
    List the events of one ``M x L`` placement matrix, sorted by onset then atom index.

    Entries above ``eps`` are events. Their probability is the entry clamped to ``[0, 1]``.
    """
    if R.dim() != 2:
        raise ValueError(f"expected an M x L matrix, got shape {tuple(R.shape)}")
    P = R.clamp(0, 1)
    starts = atoms.start_points
    ends = atoms.end_points
    nonzero = (R.detach() > eps).nonzero().tolist()
    nonzero.sort(key=lambda jk: (jk[1], jk[0]))
    return [
        Event(
            atom=j,
            onset=k,
            prob=P[j, k],
            width=atoms.width[j],
            soft_width=atoms.soft_width[j],
            start=starts[j],
            end=ends[j],
        )
        for j, k in nonzero
    ]


def overlap(e: Event, other: Event, soft: bool = False, beta: float = 20.0) -> float:
    """
    Length of the intersection of two events' intervals.

    The soft variant measures intervals with the soft widths and replaces ``max(0, .)`` by a
    softplus of sharpness ``beta``.
    """
    if soft:
        return float(_soft_overlap(e, other, beta))
    return float(max(0, min(e.offset, other.offset) - max(e.onset, other.onset)))


def _soft_overlap(e: Event, other: Event, beta: float) -> torch.Tensor:
    end = torch.minimum(e.onset + e.soft_width, other.onset + other.soft_width)
    return smooth_relu(end - max(e.onset, other.onset), beta)


def overlap_cost(e: Event, other: Event, beta: float = 20.0) -> torch.Tensor:
    hard = torch.tensor(overlap(e, other), dtype=e.soft_width.dtype)
    return straight_through(hard, _soft_overlap(e, other, beta))


def pair_cost(e: Event, other: Event, params: GeoParams) -> torch.Tensor:
    """Compatibility cost of ``e`` followed by ``other``: endpoint gap, time gap, overlap."""
    spatial = ((e.end - other.start) ** 2).sum()
    gap = st_abs(other.onset - (e.onset + e.width), params.delta)
    return spatial + params.eta * gap + params.rho * overlap_cost(e, other, params.beta_ovl)


def _pair_costs(atoms: EffectiveAtom, L: int, params: GeoParams) -> torch.Tensor:
    """Dense ``c[j, k, j', k']`` for every pair of possible events."""
    M = atoms.content.shape[0]
    dtype = atoms.content.dtype
    steps = torch.arange(L, dtype=dtype)
    spatial = ((atoms.end_points.unsqueeze(1) - atoms.start_points.unsqueeze(0)) ** 2).sum(-1)

    onset = steps.view(1, L, 1, 1)
    next_onset = steps.view(1, 1, 1, L)
    gap = st_abs(next_onset - (onset + atoms.width.view(M, 1, 1, 1)), params.delta)

    latest_start = torch.maximum(onset, next_onset)
    hard_end = onset + atoms.hard_width.to(dtype).view(M, 1, 1, 1)
    next_hard_end = next_onset + atoms.hard_width.to(dtype).view(1, 1, M, 1)
    hard = (torch.minimum(hard_end, next_hard_end) - latest_start).clamp(min=0)
    soft_end = onset + atoms.soft_width.view(M, 1, 1, 1)
    next_soft_end = next_onset + atoms.soft_width.view(1, 1, M, 1)
    soft = smooth_relu(torch.minimum(soft_end, next_soft_end) - latest_start, params.beta_ovl)
    ovl = straight_through(hard, soft)

    return spatial.view(M, 1, M, 1) + params.eta * gap + params.rho * ovl


def _pair_order(M: int, L: int) -> torch.Tensor:
    """``order[j, k, j', k']``: event (j, k) precedes (j', k') in (onset, atom) order."""
    j = torch.arange(M).view(M, 1, 1, 1)
    k = torch.arange(L).view(1, L, 1, 1)
    j2 = torch.arange(M).view(1, 1, M, 1)
    k2 = torch.arange(L).view(1, 1, 1, L)
    return (k < k2) | ((k == k2) & (j < j2))


def vacancy(P: torch.Tensor) -> torch.Tensor:
    """``G[..., k, k']``: probability that no event starts strictly between k and k'."""
    L = P.shape[-1]
    free = (1 - P).prod(dim=-2)
    ones = torch.ones(*P.shape[:-2], 1, dtype=P.dtype, device=P.device)
    rows = []
    for k in range(L):
        between = torch.cumprod(free[..., k + 1 : L - 1], dim=-1)
        head = ones.expand(*P.shape[:-2], min(k + 2, L))
        rows.append(torch.cat([head, between], dim=-1)[..., :L])
    return torch.stack(rows, dim=-2)


def event_probs(R: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Event probabilities: entries clamped to ``[0, 1]``, zero below ``eps``."""
    return R.clamp(0, 1) * (R.detach() > eps)


def psi_geo(R: torch.Tensor, atoms: EffectiveAtom, params: GeoParams) -> torch.Tensor:
    """Vacancy-weighted sum of pairwise compatibility costs over ordered event pairs."""
    M, L = R.shape[-2:]
    P = event_probs(R, params.eps_event)
    cost = _pair_costs(atoms, L, params) * _pair_order(M, L).to(R.dtype)
    return torch.einsum("...jk,...mn,...kn,jkmn->...", P, P, vacancy(P), cost)


def psi_geo_bruteforce(
    R: torch.Tensor, atoms: EffectiveAtom, params: GeoParams, limit: int = BRUTEFORCE_LIMIT
) -> torch.Tensor:
    """Direct evaluation of the event-geometry sum for one ``M x L`` matrix."""
    events = extract_events(R, atoms, params.eps_event)
    if len(events) > limit:
        raise OracleLimitError(len(events), limit)
    total = torch.zeros((), dtype=R.dtype)
    for a, b in itertools.combinations(range(len(events)), 2):
        e, other = events[a], events[b]
        vacancy = torch.ones((), dtype=R.dtype)
        for u in events:
            if e.onset < u.onset < other.onset:
                vacancy = vacancy * (1 - u.prob)
        total = total + e.prob * other.prob * vacancy * pair_cost(e, other, params)
    return total


def psi_prim(gate: torch.Tensor, x: torch.Tensor, tau: float) -> torch.Tensor:
    """Ownership changes between consecutive timesteps, weighted by kinematic continuity."""
    step = torch.linalg.vector_norm(x[..., 1:] - x[..., :-1], dim=-2)
    if tau > 0:
        omega = torch.exp(-step / tau)
    else:
        omega = (step == 0).to(x.dtype)
    change = (gate[..., 1:] - gate[..., :-1]).abs().sum(dim=-2)
    return (omega * change).sum(dim=-1)


def psi_rec(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    return ((x - x_hat) ** 2).sum(dim=(-2, -1))


def psi_sparse(R: torch.Tensor) -> torch.Tensor:
    # |R| with slope +1 at zero, inactive straight-through entries get a sparsity gradient
    return torch.where(R >= 0, R, -R).sum(dim=(-2, -1))


def psi_total(
    R: torch.Tensor,
    gate: torch.Tensor,
    x: torch.Tensor,
    atoms: EffectiveAtom,
    params: GeoParams,
) -> EnergyTerms:
    """All four legality terms and their weighted total, per sample."""
    Rc = R.clamp(0, 1)
    rec = psi_rec(x, synthesize(Rc, atoms, gate))
    sparse = psi_sparse(R)
    prim = psi_prim(gate, x, params.tau)
    geo = psi_geo(R, atoms, params)
    total = rec + params.lambda_s * sparse + params.lambda_p * prim + params.lambda_g * geo
    return EnergyTerms(rec=rec, sparse=sparse, prim=prim, geo=geo, total=total)


def energy(
    R: torch.Tensor,
    x: torch.Tensor,
    atoms: EffectiveAtom,
    gamma: torch.Tensor,
    params: GeoParams,
    probs: torch.Tensor | None = None,
) -> EnergyTerms:
    """Gate ``R`` with the dictionary's priorities and evaluate :func:`psi_total`."""
    _, gate = compose(R.clamp(0, 1), atoms, gamma, probs, params.eps_event)
    return psi_total(R, gate, x, atoms, params)


def events_to_matrix(
    entries: Sequence[tuple[int, int, float]], M: int, L: int, dtype: torch.dtype = torch.float64
) -> torch.Tensor:
    R = torch.zeros(M, L, dtype=dtype)
    for j, k, p in entries:
        if not (0 <= j < M and 0 <= k < L):
            raise ValueError(f"placement ({j}, {k}) is outside the {M} x {L} timeline")
        R[j, k] = p
    return R
