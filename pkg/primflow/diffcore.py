# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""
Differentiation contract shared by every loss in primflow.

Tensors are plain :class:`torch.Tensor` values and gradients come from torch's reverse-mode
autograd. Straight-through nodes (Bernoulli sampling, rounding, the hard gate, the hard
``|.|`` and overlap terms) go through :func:`straight_through`. Outside :func:`relaxed` such a
node returns its hard value with the gradient of its soft counterpart. Inside :func:`relaxed`
it returns the soft value itself, which gives the smooth path that finite differences
can check.
"""
from __future__ import annotations

from typing import Callable, Iterator, Mapping, NamedTuple
from contextlib import contextmanager
from contextvars import ContextVar
import logging

import torch
import torch.nn.functional as F

from .errors import NumericalError, ShapeError
from .types import GradReport

log = logging.getLogger("primflow.diffcore")

ScalarFn = Callable[[torch.Tensor], torch.Tensor]

_relaxed: ContextVar[bool] = ContextVar("primflow_relaxed", default=False)


@contextmanager
def relaxed(enabled: bool = True) -> Iterator[None]:
    """Evaluate straight-through nodes by their soft value inside this block."""
    token = _relaxed.set(enabled)
    try:
        yield
    finally:
        _relaxed.reset(token)


def is_relaxed() -> bool:
    return _relaxed.get()


def straight_through(hard: torch.Tensor, soft: torch.Tensor) -> torch.Tensor:
    """
    Identity-gradient node: the value of ``hard`` with the gradient of ``soft``.

    The zero term is added last so the forward value is ``hard`` bit-exactly.
    """
    if is_relaxed():
        return soft
    return hard.detach() + (soft - soft.detach())


def st_round(x: torch.Tensor) -> torch.Tensor:
    # ties round up
    return straight_through(torch.floor(x + 0.5), x)


def st_bernoulli(q: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    b = torch.bernoulli(q.detach(), generator=generator)
    return straight_through(b, q)


def smooth_abs(z: torch.Tensor, delta: float = 1e-3) -> torch.Tensor:
    return torch.sqrt(z * z + delta * delta)


def st_abs(z: torch.Tensor, delta: float = 1e-3) -> torch.Tensor:
    return straight_through(z.abs(), smooth_abs(z, delta))


def smooth_relu(z: torch.Tensor, beta: float = 20.0) -> torch.Tensor:
    return F.softplus(beta * z, threshold=50.0) / beta


def ensure_finite(term: str, value: torch.Tensor) -> torch.Tensor:
    if not bool(torch.isfinite(value).all()):
        raise NumericalError(term)
    return value


def eval_with_grad(
    f: ScalarFn, params: torch.Tensor, term: str = "f"
) -> tuple[float, torch.Tensor]:
    """
    Evaluate a scalar function and its gradient with respect to ``params``.

    Args:
        f: The function. It must return a tensor with a single element.
        params: The point to evaluate at. It is cloned, the caller's tensor is never mutated.
        term: Name used in the error when the value or gradient is not finite.

    Returns:
        The value as a Python float and the gradient with the shape of ``params``.
    """
    p = params.detach().clone().requires_grad_(True)
    value = f(p)
    if value.numel() != 1:
        raise ShapeError(f"{term} returned shape {tuple(value.shape)}, expected a scalar")
    value = value.reshape(())
    ensure_finite(term, value.detach())
    (grad,) = torch.autograd.grad(value, p, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(p)
    if not bool(torch.isfinite(grad).all()):
        raise NumericalError(term, "non-finite gradient")
    return float(value.detach()), grad.detach()


def grad_check(
    f: ScalarFn,
    params: torch.Tensor,
    eps: float = 1e-5,
    threshold: float = 1e-8,
    floor: float = 1e-6,
    scale_floor: float = 1e-3,
) -> GradReport:
    """
    Compare the autograd gradient against central finite differences in float64.

    The relative error of one coordinate is ``|a - fd| / max(|a|, |fd|, floor, scale_floor * G)``,
    with ``G`` the largest analytic gradient magnitude, and is only measured where
    ``|a| + |fd| > threshold``. Coordinates whose gradient is tiny next to ``G`` are thus
    judged relative to ``G``.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")
    p = params.detach().to(torch.float64)
    _, analytic = eval_with_grad(f, p)
    analytic = analytic.reshape(-1)
    scale = float(analytic.abs().max()) if analytic.numel() else 0.0
    denominator_floor = max(floor, scale_floor * scale)
    flat = p.reshape(-1)
    max_abs = max_rel = 0.0
    worst = compared = 0
    with torch.no_grad():
        for i in range(flat.numel()):
            shifted = flat.clone()
            shifted[i] = flat[i] + eps
            upper = float(f(shifted.view_as(p)))
            shifted[i] = flat[i] - eps
            lower = float(f(shifted.view_as(p)))
            fd = (upper - lower) / (2 * eps)
            a = float(analytic[i])
            err = abs(a - fd)
            max_abs = max(max_abs, err)
            if abs(a) + abs(fd) <= threshold:
                continue
            compared += 1
            rel = err / max(abs(a), abs(fd), denominator_floor)
            if rel > max_rel:
                max_rel, worst = rel, i
    return GradReport(
        max_abs_err=max_abs,
        max_rel_err=max_rel,
        worst_index=worst,
        n_params=flat.numel(),
        n_compared=compared,
    )


class ParamSlot(NamedTuple):
    name: str
    start: int
    shape: torch.Size


def pack(tensors: Mapping[str, torch.Tensor]) -> tuple[torch.Tensor, list[ParamSlot]]:
    """Flatten named tensors into one vector, remembering where each one lives."""
    slots = []
    start = 0
    for name, tensor in tensors.items():
        slots.append(ParamSlot(name, start, tensor.shape))
        start += tensor.numel()
    flat = torch.cat([t.detach().reshape(-1) for t in tensors.values()])
    return flat, slots


def unpack(flat: torch.Tensor, slots: list[ParamSlot]) -> dict[str, torch.Tensor]:
    out = {}
    for slot in slots:
        size = 1
        for dim in slot.shape:
            size *= dim
        out[slot.name] = flat[slot.start : slot.start + size].view(slot.shape)
    return out


def locate(index: int, slots: list[ParamSlot]) -> str:
    for slot in reversed(slots):
        if index >= slot.start:
            return slot.name
    raise IndexError(index)


def grad_check_named(
    f: Callable[[dict[str, torch.Tensor]], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    eps: float = 1e-5,
) -> tuple[GradReport, str]:
    """:func:`grad_check` over several named tensors. Also returns the worst tensor's name."""
    flat, slots = pack({k: v.to(torch.float64) for k, v in params.items()})
    report = grad_check(lambda x: f(unpack(x, slots)), flat, eps)
    worst = locate(report.worst_index, slots)
    log.debug("Gradient check over %d parameters, worst in %s", report.n_params, worst)
    return report, worst
