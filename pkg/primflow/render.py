# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""SVG figures of dictionaries, tilings and event timelines. Needs the ``svg`` extra."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import PrimflowError

try:
    from matplotlib import colormaps
    from matplotlib.figure import Figure
except ImportError:
    colormaps = Figure = None


def _figure(**kwargs) -> "Figure":
    if Figure is None:
        raise PrimflowError("SVG rendering requires matplotlib (install primflow[svg])")
    return Figure(**kwargs)


def _save(fig: "Figure", path: str | Path) -> None:
    fig.savefig(path, format="svg", bbox_inches="tight")


def _color(j: int) -> tuple:
    return colormaps["tab10"](j % 10)


def render_dictionary(content: np.ndarray, widths: np.ndarray, path: str | Path) -> None:
    """
    One panel per atom. Channels are drawn against time and a dashed line marks the width.

    Args:
        content: ``M x C x K`` effective atom content.
        widths: ``M`` integer widths.
    """
    M, C, K = content.shape
    fig = _figure(figsize=(2.2 * M, 2.0))
    axes = fig.subplots(1, M, squeeze=False)[0]
    for j, ax in enumerate(axes):
        for c in range(C):
            ax.plot(np.arange(K), content[j, c], label=f"c{c}")
        ax.axvline(int(widths[j]) - 0.5, linestyle="--", color="grey", linewidth=0.8)
        ax.set_title(f"atom {j} (w={int(widths[j])})", fontsize=8)
        ax.tick_params(labelsize=6)
    axes[0].legend(fontsize=6)
    _save(fig, path)


def render_tiling(x_hat: np.ndarray, gate: np.ndarray, path: str | Path) -> None:
    """
    A synthesized trajectory with every segment colored by the primitive that owns it.

    Two-channel trajectories are drawn in the plane, anything else channel by channel
    against time.

    Args:
        x_hat: ``C x L`` trajectory.
        gate: ``M x L`` one-hot ownership.
    """
    C, L = x_hat.shape
    owner = np.where(gate.any(axis=0), gate.argmax(axis=0), -1)
    fig = _figure(figsize=(4.0, 4.0 if C == 2 else 2.5))
    ax = fig.subplots()
    for t in range(L - 1):
        color = _color(owner[t]) if owner[t] >= 0 else (0.6, 0.6, 0.6, 1.0)
        if C == 2:
            ax.plot(x_hat[0, t : t + 2], x_hat[1, t : t + 2], color=color, linewidth=1.5)
        else:
            for c in range(C):
                ax.plot([t, t + 1], x_hat[c, t : t + 2], color=color, linewidth=1.5)
    if C == 2:
        ax.set_aspect("equal", adjustable="datalim")
    _save(fig, path)


def render_timeline(R: np.ndarray, widths: np.ndarray, path: str | Path) -> None:
    """Every event as a bar from its onset over its width, one row per atom."""
    M, L = R.shape
    fig = _figure(figsize=(6.0, 0.4 * M + 0.8))
    ax = fig.subplots()
    for j, k in zip(*np.nonzero(R)):
        width = min(int(widths[j]), L - int(k))
        ax.broken_barh([(int(k), width)], (j - 0.4, 0.8), facecolors=_color(int(j)))
    ax.set_xlim(0, L)
    ax.set_ylim(-0.6, M - 0.4)
    ax.set_yticks(range(M))
    ax.set_xlabel("timestep")
    ax.set_ylabel("atom")
    _save(fig, path)
