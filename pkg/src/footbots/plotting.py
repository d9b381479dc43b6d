"""Scene figures: observed tracks, ground-truth futures and predictions."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .model import Role, SequenceSample  # noqa: E402

__all__ = ["plot_scene", "save_scene_figure"]

_COLORS = {Role.BALL: "black", Role.OFFENSE: "tab:red", Role.DEFENSE: "tab:blue"}


def plot_scene(ax, sample: SequenceSample, prediction=None, predicted=None, title: str = "",
               bounds: float | None = None):
    """Draw one scene on ``ax``.

    Observed frames are solid lines, ground-truth futures dashed, and
    predictions dotted. Ground-truth end points are squares, predicted end
    points crosses, and the ball is drawn with a circle at the last
    observed frame.
    """
    prior, future = sample.prior, sample.future
    if predicted is None:
        predicted = np.ones(sample.M, bool)
    for m in range(sample.M):
        role = Role(int(sample.roles[m]))
        color = _COLORS[role]
        ax.plot(prior[m, :, 0], prior[m, :, 1], "-", color=color, lw=1.2, alpha=0.8)
        gt = np.concatenate([prior[m, -1:], future[m]])
        ax.plot(gt[:, 0], gt[:, 1], "--", color=color, lw=1.0, alpha=0.6)
        ax.plot(*future[m, -1], "s", color=color, ms=5, mfc="none")
        if role is Role.BALL:
            ax.plot(*prior[m, -1], "o", color=color, ms=6, mfc="white")
        if prediction is not None and predicted[m]:
            pr = np.concatenate([prior[m, -1:], prediction[m]])
            ax.plot(pr[:, 0], pr[:, 1], ":", color=color, lw=1.4)
            ax.plot(*prediction[m, -1], "x", color=color, ms=6)
    if bounds is not None:
        ax.set_xlim(-bounds, bounds)
        ax.set_ylim(-bounds, bounds)
        ax.add_patch(plt.Rectangle((-bounds, -bounds), 2 * bounds, 2 * bounds, fill=False,
                                   color="grey", lw=0.8))
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title, fontsize=9)
    return ax


def save_scene_figure(path, sample: SequenceSample, panels: Sequence[tuple[str, np.ndarray, np.ndarray]],
                      bounds: float | None = None) -> None:
    """Write a row of panels, one per ``(title, prediction, predicted_mask)``.

    The output format follows the file suffix (SVG for ``.svg``).
    """
    panels = list(panels) or [("ground truth", None, None)]
    fig, axes = plt.subplots(1, len(panels), figsize=(3.4 * len(panels), 3.6), squeeze=False)
    for ax, (title, pred, mask) in zip(axes[0], panels):
        plot_scene(ax, sample, pred, mask, title, bounds)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
