"""Report figures rendered next to the CSV outputs.

Everything draws onto a fresh figure and writes a PNG; nothing is shown
interactively.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
}


def new_figure(width=6.4, height=None, nrows=1, ncols=1, **kw):
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(nrows, ncols, figsize=(width, height or width * golden), **kw)
    return fig, ax


def save(fig, path: str | Path) -> Path:
    path = Path(path)
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def subset_mae(rows, path):
    """Ascending per-structure MAE bars."""
    fig, ax = new_figure(7.0, 3.2)
    mae = [r.mae for r in rows]
    ax.bar(np.arange(1, len(rows) + 1), mae, color="tab:blue", width=0.8)
    ax.set_xlabel("subset rank")
    ax.set_ylabel("MAE (m)")
    ax.set_title(f"MAE per structure ({len(rows)} subsets)")
    if len(rows) <= 16:
        ax.set_xticks(np.arange(1, len(rows) + 1))
        ax.set_xticklabels([f"{r.stiffness / 1e3:g}/{r.mass:g}" for r in rows], rotation=60, ha="right")
        ax.set_xlabel("stiffness (kN/m) / mass (kg), ascending MAE")
    return save(fig, path)


def ci_histogram(edges, mass, path, label="MC-GRU"):
    fig, ax = new_figure(4.8)
    widths = np.diff(edges)
    ax.bar(edges[:-1], mass, width=widths, align="edge", alpha=0.8, edgecolor="k", linewidth=0.4, label=label)
    ax.set_xlabel("correlation index")
    ax.set_ylabel("probability")
    ax.legend()
    return save(fig, path)


def time_histories(t, series: Sequence[tuple[str, np.ndarray, np.ndarray]], path):
    """Stacked truth-vs-prediction panels; ``series`` holds (title, truth, pred)."""
    n = len(series)
    fig, axes = new_figure(7.0, 1.9 * n + 0.4, nrows=n, sharex=True, squeeze=False)
    for ax, (title, truth, pred) in zip(axes[:, 0], series):
        ax.plot(t, truth, color="k", lw=0.9, label="truth")
        ax.plot(t, pred, color="tab:red", lw=0.9, ls="--", label="prediction")
        ax.set_ylabel("x (m)")
        ax.set_title(title, loc="left")
    axes[0, 0].legend(loc="upper right")
    axes[-1, 0].set_xlabel("time (s)")
    return save(fig, path)


def loss_history(history, path):
    fig, ax = new_figure(4.8)
    ax.semilogy(history.epochs, history.train_mse, label="train")
    ax.semilogy(history.epochs, history.val_mse, label="validation")
    if history.best_epoch:
        ax.axvline(history.best_epoch, color="0.5", ls=":", lw=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE (normalised)")
    ax.legend()
    return save(fig, path)


def spectra(periods, curves: Sequence[tuple[str, np.ndarray]], path):
    fig, ax = new_figure(4.8)
    for _, sa in curves:
        ax.plot(periods, sa, color="0.6", lw=0.6)
    if curves:
        ax.plot(periods, np.mean([sa for _, sa in curves], axis=0), color="k", lw=1.4, label="mean")
        ax.legend()
    ax.set_xlabel("period (s)")
    ax.set_ylabel("Sa (m/s$^2$)")
    return save(fig, path)


def hysteresis(x, f, path):
    fig, ax = new_figure(4.8)
    ax.plot(x, f, color="k", lw=0.9)
    ax.set_xlabel("displacement (m)")
    ax.set_ylabel("restoring force (N)")
    return save(fig, path)
