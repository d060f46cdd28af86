# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""Trajectory files, the sliding-window protocol, normalization and synthetic data."""
from __future__ import annotations

from typing import Iterable, Sequence
from collections import OrderedDict
from pathlib import Path
import csv
import json
import logging
import math

import numpy as np

from .errors import ParseError
from .types import (
    Matrix,
    NormStats,
    SynthSpec,
    SynthTruth,
    Trajectory,
    TruthEvent,
    Vector,
    WindowSample,
)

log = logging.getLogger("primflow.trajdata")

FORMATS = ("csv", "jsonl")


def detect_format(path: str | Path, format: str | None = None) -> str:
    if format:
        if format not in FORMATS:
            raise ValueError(f"Unknown trajectory format {format!r}")
        return format
    suffix = Path(path).suffix.lstrip(".").lower()
    return "jsonl" if suffix in ("jsonl", "json", "ndjson") else "csv"


def load_trajectories(path: str | Path, format: str | None = None) -> list[Trajectory]:
    """
    Read trajectories from a CSV or JSONL file.

    CSV files have the header ``traj_id,task_id,t,c0..c{C-1}`` and one row per timestep.
    JSONL files have one ``{"id", "task", "points"}`` object per line, where ``points`` is a
    list of T coordinate lists of length C.

    Raises:
        ParseError: A column is missing, a value is not numeric, an ``(id, t)`` pair repeats or
            a trajectory is shorter than two timesteps. The error carries the 1-based line.
    """
    format = detect_format(path, format)
    with open(path, newline="") as file:
        if format == "csv":
            return _read_csv(file)
        return _read_jsonl(file)


def _read_csv(lines: Iterable[str]) -> list[Trajectory]:
    reader = csv.reader(lines)
    try:
        header = [col.strip() for col in next(reader)]
    except StopIteration:
        raise ParseError(1, "empty file")
    if header[:3] != ["traj_id", "task_id", "t"]:
        raise ParseError(1, "header must start with traj_id,task_id,t")
    channels = header[3:]
    if not channels:
        raise ParseError(1, "no coordinate columns")
    for i, name in enumerate(channels):
        if name != f"c{i}":
            raise ParseError(1, f"expected column c{i}, found {name!r}")

    rows: OrderedDict[str, dict[int, list[float]]] = OrderedDict()
    tasks: dict[str, str] = {}
    first_line: dict[str, int] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not col.strip() for col in row):
            continue
        if len(row) != len(header):
            raise ParseError(line_no, f"expected {len(header)} columns, got {len(row)}")
        traj_id, task_id, t_raw = (col.strip() for col in row[:3])
        try:
            t = int(t_raw)
        except ValueError:
            raise ParseError(line_no, f"timestep {t_raw!r} is not an integer")
        coords = []
        for name, raw in zip(channels, row[3:]):
            try:
                value = float(raw)
            except ValueError:
                raise ParseError(line_no, f"{name} = {raw.strip()!r} is not numeric")
            if not math.isfinite(value):
                raise ParseError(line_no, f"{name} is not finite")
            coords.append(value)
        per_id = rows.setdefault(traj_id, {})
        if t in per_id:
            raise ParseError(line_no, f"duplicate timestep {t} for trajectory {traj_id!r}")
        per_id[t] = coords
        tasks.setdefault(traj_id, task_id)
        first_line.setdefault(traj_id, line_no)

    trajectories = []
    for traj_id, per_id in rows.items():
        if len(per_id) < 2:
            raise ParseError(
                first_line[traj_id], f"trajectory {traj_id!r} has fewer than 2 points"
            )
        points = np.array([per_id[t] for t in sorted(per_id)], dtype=np.float64).T
        trajectories.append(Trajectory(id=traj_id, task=tasks[traj_id], points=Matrix(points)))
    return trajectories


def _read_jsonl(lines: Iterable[str]) -> list[Trajectory]:
    trajectories = []
    channels = None
    seen = set()
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            traj_id = str(data["id"])
            task = str(data.get("task", ""))
            points = np.asarray(data["points"], dtype=np.float64)
        except json.JSONDecodeError as e:
            raise ParseError(line_no, f"invalid JSON: {e.msg}")
        except KeyError as e:
            raise ParseError(line_no, f"missing field {e.args[0]!r}")
        except (TypeError, ValueError):
            raise ParseError(line_no, "points must be a list of numeric coordinate lists")
        if points.ndim != 2 or points.shape[0] < 2:
            raise ParseError(line_no, "points must hold at least 2 timesteps of equal width")
        if not np.isfinite(points).all():
            raise ParseError(line_no, "points contain non-finite values")
        if channels is not None and points.shape[1] != channels:
            raise ParseError(line_no, f"expected {channels} channels, got {points.shape[1]}")
        if traj_id in seen:
            raise ParseError(line_no, f"duplicate trajectory id {traj_id!r}")
        seen.add(traj_id)
        channels = points.shape[1]
        trajectories.append(Trajectory(id=traj_id, task=task, points=Matrix(points.T.copy())))
    return trajectories


def save_trajectories(
    trajectories: Sequence[Trajectory], path: str | Path, format: str | None = None
) -> None:
    """Write trajectories losslessly (floats use their shortest round-tripping repr)."""
    format = detect_format(path, format)
    with open(path, "w", newline="") as file:
        if format == "jsonl":
            for traj in trajectories:
                obj = {"id": traj.id, "task": traj.task, "points": traj.points.T.tolist()}
                file.write(json.dumps(obj) + "\n")
            return
        channels = trajectories[0].channels if trajectories else 0
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(["traj_id", "task_id", "t", *(f"c{i}" for i in range(channels))])
        for traj in trajectories:
            for t in range(traj.length):
                values = (repr(float(v)) for v in traj.points[:, t])
                writer.writerow([traj.id, traj.task, t, *values])


def window(
    dataset: Sequence[Trajectory], total: int, obs: int, stride: int | None = None
) -> list[WindowSample]:
    """
    Cut trajectories into fixed-length samples split into an observed prefix and a future.

    The stride defaults to ``total``, which gives non-overlapping windows. A trajectory of
    length T yields ``floor((T - total) / stride) + 1`` samples when ``T >= total``.
    """
    stride = total if stride is None else stride
    if not 0 < obs < total:
        raise ValueError(f"need 0 < obs < total, got obs={obs}, total={total}")
    if stride < 1:
        raise ValueError(f"stride must be at least 1, got {stride}")
    samples = []
    for traj in dataset:
        if traj.length < total:
            continue
        for offset in range(0, traj.length - total + 1, stride):
            chunk = traj.points[:, offset : offset + total]
            samples.append(
                WindowSample(
                    observed=chunk[:, :obs].copy(),
                    future=chunk[:, obs:].copy(),
                    source_id=traj.id,
                    offset=offset,
                    task=traj.task,
                )
            )
    return samples


def compute_stats(dataset: Sequence[Trajectory]) -> NormStats:
    if not dataset:
        raise ValueError("Cannot compute normalization statistics of an empty dataset")
    allpoints = np.concatenate([traj.points for traj in dataset], axis=1)
    mean = allpoints.mean(axis=1)
    std = allpoints.std(axis=1)
    clamped = [bool(s < 1e-12) for s in std]
    for channel, was_clamped in enumerate(clamped):
        if was_clamped:
            log.warning("Channel %d has zero variance, clamping its std to 1", channel)
    std = np.where(clamped, 1.0, std)
    return NormStats(mean=Vector(mean), std=Vector(std), clamped=clamped)


def _per_channel(values: np.ndarray, ndim: int) -> np.ndarray:
    return values.reshape(-1) if ndim == 1 else values.reshape(-1, 1)


def normalize_array(points: np.ndarray, stats: NormStats) -> np.ndarray:
    """Normalize a C x T matrix, an N x C x T batch or a single C-vector."""
    mean, std = _per_channel(stats.mean, points.ndim), _per_channel(stats.std, points.ndim)
    return (points - mean) / std


def denormalize_array(points: np.ndarray, stats: NormStats) -> np.ndarray:
    mean, std = _per_channel(stats.mean, points.ndim), _per_channel(stats.std, points.ndim)
    return points * std + mean


def normalize(
    dataset: Sequence[Trajectory], stats: NormStats | None = None
) -> tuple[list[Trajectory], NormStats]:
    """
    Standardize every channel to zero mean and unit std.

    Statistics are computed from ``dataset`` unless given, so the test split can reuse the
    training split's statistics.
    """
    stats = stats or compute_stats(dataset)
    return [traj.with_points(normalize_array(traj.points, stats)) for traj in dataset], stats


def denormalize(dataset: Sequence[Trajectory], stats: NormStats) -> list[Trajectory]:
    return [traj.with_points(denormalize_array(traj.points, stats)) for traj in dataset]


def split(
    dataset: Sequence[Trajectory], test_fraction: float, seed: int = 0
) -> tuple[list[Trajectory], list[Trajectory]]:
    """Split by trajectory so no window of a test trajectory leaks into training."""
    train, _, test = train_val_test_split(dataset, 0.0, test_fraction, seed)
    return train, test


def train_val_test_split(
    dataset: Sequence[Trajectory], val_fraction: float, test_fraction: float, seed: int = 0
) -> tuple[list[Trajectory], list[Trajectory], list[Trajectory]]:
    """
    Split by trajectory into training, validation and test sets.

    The test set does not depend on ``val_fraction``, so adding a validation split never moves
    a trajectory into or out of the test set.
    """
    if not 0 <= test_fraction < 1:
        raise ValueError(f"test_fraction must be in [0, 1), got {test_fraction}")
    if not 0 <= val_fraction < 1 or val_fraction + test_fraction >= 1:
        raise ValueError(f"val_fraction must be in [0, 1 - test_fraction), got {val_fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset)).tolist()
    n_test = int(round(len(dataset) * test_fraction))
    n_val = int(round(len(dataset) * val_fraction))
    test_idx = set(order[:n_test])
    val_idx = set(order[n_test : n_test + n_val])
    train = [traj for i, traj in enumerate(dataset) if i not in test_idx and i not in val_idx]
    val = [traj for i, traj in enumerate(dataset) if i in val_idx]
    test = [traj for i, traj in enumerate(dataset) if i in test_idx]
    return train, val, test


def stack(dataset: Sequence[Trajectory], length: int | None = None) -> np.ndarray:
    """Stack equal-length trajectories (or their first ``length`` steps) into N x C x L."""
    length = length or min(traj.length for traj in dataset)
    too_short = [traj.id for traj in dataset if traj.length < length]
    if too_short:
        raise ValueError(f"{len(too_short)} trajectories are shorter than {length}")
    return np.stack([traj.points[:, :length] for traj in dataset])


def stack_windows(samples: Sequence[WindowSample]) -> np.ndarray:
    return np.stack([sample.full for sample in samples])


def task_vocabulary(tasks: Iterable[str]) -> dict[str, int]:
    """Task label to embedding index, in sorted label order."""
    return {task: i for i, task in enumerate(sorted(set(tasks)))}


def task_indices(tasks: Iterable[str], vocabulary: dict[str, int]) -> list[int]:
    """Map labels through ``vocabulary``. Labels it does not know map to index 0."""
    return [vocabulary.get(task, 0) for task in tasks]


def _atom_shape(rng: np.random.Generator, channels: int, length: int) -> np.ndarray:
    # Closed excursions from the origin: every harmonic vanishes at both ends, so an atom
    # starts where its predecessor stopped without any translation.
    u = np.linspace(0.0, 1.0, length)
    atom = np.zeros((channels, length))
    for c in range(channels):
        for n in (1, 2, 3):
            atom[c] += rng.normal(0.0, 1.0 / n) * np.sin(n * np.pi * u)
    atom[:, 0] = 0.0
    atom[:, -1] = 0.0
    return atom


def synth_atoms(spec: SynthSpec, rng: np.random.Generator) -> list[np.ndarray]:
    if spec.M_true == 1:
        lengths = [spec.K]
    else:
        low = min(max(spec.min_width, spec.K // 2), spec.K)
        lengths = rng.integers(low, spec.K + 1, size=spec.M_true).tolist()
    return [_atom_shape(rng, spec.C, k) for k in lengths]


def synth_generate(spec: SynthSpec) -> tuple[list[Trajectory], SynthTruth]:
    """
    Generate trajectories that are contiguous tilings of a small set of true atoms.

    Every atom is translated so its first point lands on the previous atom's last point.
    I.i.d. Gaussian noise of ``spec.noise_std`` is added afterwards. A tiling that overshoots
    ``L`` truncates its last atom, which is flagged in the truth. Output is a pure function
    of ``spec``.
    """
    if not 1 <= spec.K <= spec.L:
        raise ValueError(f"need 1 <= K <= L, got K={spec.K}, L={spec.L}")
    if spec.noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    rng = np.random.default_rng(spec.seed)
    atoms = synth_atoms(spec, rng)
    n_tasks = max(spec.n_tasks, 1)
    # Each task prefers its own mix of atoms so task labels carry information.
    task_mix = rng.dirichlet(np.ones(spec.M_true), size=n_tasks)

    trajectories = []
    all_events = []
    for i in range(spec.n_trajectories):
        task = int(rng.integers(n_tasks))
        points = np.zeros((spec.C, spec.L))
        events = []
        onset = 0
        position = np.zeros(spec.C)
        while onset < spec.L:
            j = int(rng.choice(spec.M_true, p=task_mix[task]))
            atom = atoms[j]
            length = atom.shape[1]
            truncated = onset + length > spec.L
            if truncated:
                length = spec.L - onset
            segment = atom[:, :length] + (position - atom[:, 0])[:, None]
            points[:, onset : onset + length] = segment
            events.append(TruthEvent(atom=j, onset=onset, length=length, truncated=truncated))
            position = segment[:, -1]
            onset += length
        if spec.noise_std > 0:
            points = points + rng.normal(0.0, spec.noise_std, size=points.shape)
        trajectories.append(
            Trajectory(id=f"synth-{i:05d}", task=f"task{task}", points=Matrix(points))
        )
        all_events.append(events)
    truth = SynthTruth(true_atoms=[Matrix(atom) for atom in atoms], events=all_events)
    return trajectories, truth


def save_truth(truth: SynthTruth, path: str | Path) -> None:
    with open(path, "w") as file:
        json.dump(truth.serialize(), file)


def load_truth(path: str | Path) -> SynthTruth:
    with open(path) as file:
        return SynthTruth.deserialize(json.load(file))
