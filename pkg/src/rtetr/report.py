"""Figure rendering for the command-line report path.

Every run that writes delimited series also renders the matching figure
next to it (decay curves on log axes, fields as heatmaps or profiles).
Rendering uses the non-interactive backend and writes PNG files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .grid import Field

_META = {"Software": "rtetr"}


def save_series_figure(path, curves, title="", xlabel="", ylabel="", logy=True):
    """Line plot of (label, x, y) curves; log y-axis by default."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for label, x, y in curves:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if logy:
            good = y > 0
            ax.semilogy(x[good], y[good], label=label)
        else:
            ax.plot(x, y, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(curves) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130, metadata=_META)
    plt.close(fig)


def angular_mean(field: Field) -> np.ndarray:
    w = field.grid.weights
    return (field.values * w).sum(axis=-1) / w.sum()


def save_field_figure(path, field: Field, title=""):
    """Direction-averaged field: profile in 1D, heatmap in 2D."""
    grid = field.grid
    mean = angular_mean(field)
    fig, ax = plt.subplots(figsize=(4.6, 3.6))
    if grid.dim == 1:
        ax.plot(grid.axes()[0], mean)
        ax.set_xlabel("x")
        ax.set_ylabel("direction-averaged value")
    else:
        extent = [0, grid.n_cells[0] * grid.dx[0], 0, grid.n_cells[1] * grid.dx[1]]
        im = ax.imshow(
            mean.T, origin="lower", extent=extent, aspect="equal", cmap="viridis"
        )
        fig.colorbar(im, ax=ax, shrink=0.85)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130, metadata=_META)
    plt.close(fig)


def save_comparison_figure(path, fields, labels, title=""):
    """Side-by-side direction-averaged views of several fields."""
    n = len(fields)
    fig, axes = plt.subplots(1, n, figsize=(3.6 * n, 3.2))
    if n == 1:
        axes = [axes]
    grid = fields[0].grid
    for ax, f, lab in zip(axes, fields, labels):
        mean = angular_mean(f)
        if grid.dim == 1:
            ax.plot(grid.axes()[0], mean)
            ax.set_xlabel("x")
        else:
            extent = [0, grid.n_cells[0] * grid.dx[0], 0, grid.n_cells[1] * grid.dx[1]]
            im = ax.imshow(
                mean.T, origin="lower", extent=extent, aspect="equal", cmap="viridis"
            )
            fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_title(lab, fontsize=9)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130, metadata=_META)
    plt.close(fig)
