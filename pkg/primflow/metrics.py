# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from __future__ import annotations

from typing import Sequence
import logging

import numpy as np

from .errors import ShapeError
from .types import JsdReport, MetricReport, RecoveryReport, TruthEvent

SMOOTHING = 1e-10

log = logging.getLogger("primflow.metrics")


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if pred.ndim != 2 or pred.shape[1] < 1:
        raise ShapeError(f"expected a C x F future with F >= 1, got {pred.shape}")
    return pred, gt


def ade(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean Euclidean distance between the columns of two ``C x F`` futures."""
    pred, gt = _check_pair(pred, gt)
    return float(np.linalg.norm(pred - gt, axis=0).mean())


def fde(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _check_pair(pred, gt)
    return float(np.linalg.norm(pred[:, -1] - gt[:, -1]))


def metric_report(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> MetricReport:
    """Average ADE and FDE over samples. The ratio is of the averages."""
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if not preds:
        raise ValueError("Cannot score an empty prediction set")
    mean_ade = float(np.mean([ade(p, g) for p, g in zip(preds, gts)]))
    mean_fde = float(np.mean([fde(p, g) for p, g in zip(preds, gts)]))
    defined = mean_ade > 0
    return MetricReport(
        ade=mean_ade,
        fde=mean_fde,
        ratio=mean_fde / mean_ade if defined else None,
        n_samples=len(preds),
        ratio_undefined=not defined,
    )


def best_of(candidates: Sequence[np.ndarray], gt: np.ndarray) -> np.ndarray:
    """The candidate future with the lowest ADE."""
    if not candidates:
        raise ValueError("best_of needs at least one candidate")
    return min(candidates, key=lambda pred: ade(pred, gt))


def _features(trajectories: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    positions = np.concatenate([np.asarray(x).T for x in trajectories], axis=0)
    steps = [np.diff(np.asarray(x), axis=1).T for x in trajectories if np.asarray(x).shape[1] > 1]
    channels = positions.shape[1]
    displacements = np.concatenate(steps, axis=0) if steps else np.zeros((0, channels))
    return positions, displacements


def _bounds(values: np.ndarray) -> list[list[float]]:
    if len(values) == 0:
        return [[-0.5, 0.5]]
    lo = np.percentile(values, 1, axis=0)
    hi = np.percentile(values, 99, axis=0)
    flat = hi - lo < 1e-12
    lo, hi = np.where(flat, lo - 0.5, lo), np.where(flat, hi + 0.5, hi)
    return [[float(a), float(b)] for a, b in zip(lo, hi)]


def _histogram(values: np.ndarray, bounds: list[list[float]], bins: int) -> np.ndarray:
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    # out-of-range samples fall into the edge bins
    clipped = np.clip(values, lo, hi)
    counts, _ = np.histogramdd(clipped, bins=bins, range=list(zip(lo, hi)))
    return counts.ravel()


def _distribution(
    positions: np.ndarray,
    displacements: np.ndarray,
    pos_bounds: list[list[float]],
    disp_bounds: list[list[float]],
    bins: int,
) -> np.ndarray:
    parts = []
    for values, bounds in ((positions, pos_bounds), (displacements, disp_bounds)):
        counts = _histogram(values, bounds, bins) if len(values) else np.zeros(bins ** len(bounds))
        total = counts.sum()
        parts.append(counts / total if total > 0 else counts)
    p = np.concatenate(parts) + SMOOTHING
    return p / p.sum()


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(p * np.log2(p / q)))


def jsd(
    gen_set: Sequence[np.ndarray], real_set: Sequence[np.ndarray], bins: int = 32
) -> JsdReport:
    """
    Base-2 Jensen-Shannon divergence between two sets of ``C x T`` trajectories.

    Each set becomes one distribution made of two halves: a histogram of per-timestep
    positions and a histogram of per-step displacements, each with ``bins`` bins per channel.
    The grid spans the 1st to 99th percentile of both sets pooled together. Pooling keeps the
    measure symmetric in its arguments. Every bin gets ``1e-10`` before renormalizing.
    """
    if not gen_set or not real_set:
        raise ValueError("jsd needs two non-empty trajectory sets")
    gen_pos, gen_disp = _features(gen_set)
    real_pos, real_disp = _features(real_set)
    if gen_pos.shape[1] != real_pos.shape[1]:
        raise ShapeError(f"channel counts differ: {gen_pos.shape[1]} vs {real_pos.shape[1]}")
    pos_bounds = _bounds(np.concatenate([gen_pos, real_pos]))
    disp_bounds = _bounds(np.concatenate([gen_disp, real_disp]))
    if len(disp_bounds) != len(pos_bounds):
        disp_bounds = disp_bounds * len(pos_bounds)
    p = _distribution(gen_pos, gen_disp, pos_bounds, disp_bounds, bins)
    q = _distribution(real_pos, real_disp, pos_bounds, disp_bounds, bins)
    m = (p + q) / 2
    value = 0.5 * _kl(p, m) + 0.5 * _kl(q, m)
    return JsdReport(
        jsd_bits=float(min(max(value, 0.0), 1.0)),
        bins=bins,
        position_bounds=pos_bounds,
        displacement_bounds=disp_bounds,
        n_generated=len(gen_set),
        n_real=len(real_set),
    )


def match_onsets(pred: Sequence[int], true: Sequence[int], tolerance: int = 1) -> int:
    """Greedy one-to-one matching of onset times. Returns the number of matched pairs."""
    free = sorted(pred)
    matched = 0
    for onset in sorted(true):
        candidates = [p for p in free if abs(p - onset) <= tolerance]
        if candidates:
            best = min(candidates, key=lambda p: (abs(p - onset), p))
            free.remove(best)
            matched += 1
    return matched


def _f1(matched: int, n_pred: int, n_true: int) -> tuple[float, float, float]:
    precision = matched / n_pred if n_pred else (1.0 if n_true == 0 else 0.0)
    recall = matched / n_true if n_true else (1.0 if n_pred == 0 else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return f1, precision, recall


def onset_f1(
    pred: Sequence[Sequence[int]], true: Sequence[Sequence[int]], tolerance: int = 1
) -> tuple[float, float, float, list[float]]:
    """
    Onset recovery scores, ignoring which atom produced an onset.

    Returns:
        Pooled F1, precision and recall, plus the F1 of each trajectory.
    """
    if len(pred) != len(true):
        raise ShapeError(f"{len(pred)} predicted onset lists for {len(true)} trajectories")
    total_matched = total_pred = total_true = 0
    per_trajectory = []
    for p, t in zip(pred, true):
        matched = match_onsets(p, t, tolerance)
        per_trajectory.append(_f1(matched, len(p), len(t))[0])
        total_matched += matched
        total_pred += len(p)
        total_true += len(t)
    f1, precision, recall = _f1(total_matched, total_pred, total_true)
    return f1, precision, recall, per_trajectory


def placement_onsets(R: np.ndarray) -> list[int]:
    """Timesteps at which any atom of an ``M x L`` placement starts."""
    return np.flatnonzero(np.asarray(R).any(axis=0)).tolist()


def recovery_report(
    x: np.ndarray,
    x_hat: np.ndarray,
    placements: np.ndarray,
    truth: Sequence[Sequence[TruthEvent]],
    utilization: float = 0.0,
    tolerance: int = 1,
) -> RecoveryReport:
    """Reconstruction RMSE and onset recovery of ``N`` decoded trajectories against truth."""
    x, x_hat = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError(f"reconstruction {x_hat.shape} does not match data {x.shape}")
    rmse = float(np.sqrt(np.mean((x - x_hat) ** 2)))
    length = x.shape[-1]
    pred = [placement_onsets(R) for R in placements]
    true = [[e.onset for e in events if e.onset < length] for events in truth]
    f1, precision, recall, per_trajectory = onset_f1(pred, true, tolerance)
    return RecoveryReport(
        rmse=rmse,
        f1=f1,
        precision=precision,
        recall=recall,
        utilization=utilization,
        per_trajectory_f1=per_trajectory,
    )
