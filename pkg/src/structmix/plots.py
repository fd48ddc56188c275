"""Matplotlib renderings of study and fit reports.

All figures are rendered off-screen to PNG bytes with fixed size, dpi, and
stripped metadata, so reruns of the same report byte-match.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 - backend must be pinned first
import numpy as np  # noqa: E402

_SAVE_KW = dict(format="png", dpi=110, metadata={"Software": None})


def _to_png(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, **_SAVE_KW)
    plt.close(fig)
    return buf.getvalue()


def fixed_rmse_boxplot(per_run: dict, groups: tuple, title: str) -> bytes:
    """Boxplots of per-run fixed-effect RMSE, one panel per effect group.

    ``per_run`` maps method name to {group: (runs,) array}.
    """
    methods = list(per_run)
    fig, axes = plt.subplots(1, len(groups), figsize=(3.2 * len(groups), 3.4),
                             sharey=False)
    axes = np.atleast_1d(axes)
    for ax, group in zip(axes, groups):
        data = [per_run[m][group][np.isfinite(per_run[m][group])] for m in methods]
        ax.boxplot(data, tick_labels=methods)
        ax.set_title(group)
        ax.tick_params(axis="x", rotation=30)
        ax.set_ylabel("RMSE")
    fig.suptitle(title)
    fig.tight_layout()
    return _to_png(fig)


def covariance_heatmaps(grids: dict, title: str) -> bytes:
    """Side-by-side heatmaps (one per method) on a common color scale."""
    methods = list(grids)
    vmax = max(float(np.nanmax(g)) for g in grids.values()) or 1.0
    fig, axes = plt.subplots(1, len(methods), figsize=(3.6 * len(methods), 3.4))
    axes = np.atleast_1d(axes)
    last = None
    for ax, method in zip(axes, methods):
        last = ax.imshow(grids[method], vmin=0.0, vmax=vmax, cmap="viridis")
        ax.set_title(method)
    fig.colorbar(last, ax=list(axes), shrink=0.85)
    fig.suptitle(title)
    return _to_png(fig)


def matrix_heatmap(m: np.ndarray, title: str) -> bytes:
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    scale = float(np.abs(m).max()) or 1.0
    im = ax.imshow(m, cmap="RdBu_r", vmin=-scale, vmax=scale)
    fig.colorbar(im, ax=ax, shrink=0.9)
    ax.set_title(title)
    fig.tight_layout()
    return _to_png(fig)


def convergence_trace(trace: np.ndarray, title: str) -> bytes:
    """Coefficient and covariance deltas per iteration on a log scale."""
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    its = np.arange(1, trace.shape[0] + 1)
    ax.semilogy(its, np.maximum(trace[:, 0], 1e-300), marker="o",
                label="coefficient delta")
    ax.semilogy(its, np.maximum(trace[:, 1], 1e-300), marker="s",
                label="covariance KL delta")
    ax.set_xlabel("iteration")
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    return _to_png(fig)


def scree_plot(explained: np.ndarray, title: str) -> bytes:
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.bar(np.arange(1, explained.size + 1), explained)
    ax.set_xlabel("component")
    ax.set_ylabel("explained share")
    ax.set_title(title)
    fig.tight_layout()
    return _to_png(fig)
