"""Static figures for benchmark runs, rendered off-screen to PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import FORCE_AXES, METHOD_LABELS, BenchmarkReport  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}


def plot_trace(t, truth, estimates: dict, mask, path, title: str = "") -> Path:
    """Ground-truth force per axis with each method's estimate overlaid."""
    path = Path(path)
    t = np.asarray(t, dtype=float)
    fig, axes = plt.subplots(3, 1, figsize=(9, 7), sharex=True)
    for k, ax in enumerate(axes):
        ax.plot(t, truth[:, k], color="black", lw=1.6, label="ground truth")
        for m, F in estimates.items():
            y = np.where(mask, F[:, k], np.nan)
            ax.plot(t, y, lw=0.9, label=METHOD_LABELS.get(m, m))
        ax.set_ylabel(f"{FORCE_AXES[k]} (N)")
        ax.grid(alpha=0.3)
    axes[0].legend(loc="upper right", fontsize=8, ncol=3)
    axes[-1].set_xlabel("time (s)")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_rmse_bars(reports: list[BenchmarkReport], path) -> Path:
    """Grouped bars of average force RMSE, one group per profile."""
    path = Path(path)
    methods = [m for m in METHOD_LABELS if any(m in r.methods for r in reports)]
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(reports))
    for i, m in enumerate(methods):
        vals = [r.methods[m].average_rmse if m in r.methods else np.nan for r in reports]
        ax.bar(x + (i - (len(methods) - 1) / 2) * width, vals, width, label=METHOD_LABELS[m])
    ax.set_xticks(x)
    ax.set_xticklabels([r.profile for r in reports])
    ax.set_ylabel("average force RMSE (N)")
    ax.set_yscale("log")
    ax.grid(axis="y", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path
