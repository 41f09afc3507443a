"""Figures written next to the JSON/CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def loss_curves(record, path) -> Path:
    """Train and validation total loss per epoch, best epoch marked."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.6))
        ep = np.arange(1, len(record.train_losses) + 1)
        ax.plot(ep, record.train_losses, label="train")
        ax.plot(ep, record.val_losses, label="validation")
        if record.best_epoch:
            ax.axvline(record.best_epoch, color="0.5", ls=":", lw=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("total loss")
        ax.legend(frameon=False)
        return _save(fig, path)


def fold_metrics(report, path, title: str = "") -> Path:
    """One bar per fold for each metric, with the mean as a horizontal line."""
    keys = list(report.per_fold)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(keys), figsize=(2.2 * len(keys), 2.4), squeeze=False)
        for ax, key in zip(axes[0], keys):
            vals = report.per_fold[key]
            ax.bar(np.arange(1, len(vals) + 1), vals, color="0.6")
            ax.axhline(report.mean[key], color="k", lw=1)
            ax.set_ylim(0, 1)
            ax.set_xlabel("fold")
            ax.set_title(f"{key} {report.mean[key]:.3f} ± {report.std[key]:.3f}")
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def saliency_figure(coords: np.ndarray, values: np.ndarray, path, title: str = "",
                    witnesses=None) -> Path:
    r0, c0 = coords.min(axis=0)
    grid = np.full(tuple(coords.max(axis=0) - (r0, c0) + 1), np.nan)
    grid[coords[:, 0] - r0, coords[:, 1] - c0] = values
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 3.0))
        im = ax.imshow(grid, cmap="magma", vmin=0.0, vmax=1.0, interpolation="nearest")
        if witnesses is not None and len(witnesses):
            w = coords[np.asarray(witnesses, dtype=int)]
            ax.scatter(w[:, 1] - c0, w[:, 0] - r0, s=6, marker="s", facecolors="none", edgecolors="c", lw=0.6)
        ax.set_xticks([])
        ax.set_yticks([])
        ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label="gate saliency")
        return _save(fig, path)


def comparison(results: dict, path, metric: str = "auc", title: str = "") -> Path:
    """Mean +/- std bars for several named CV reports (ablations, baselines, sweeps)."""
    names = list(results)
    means = [results[n].mean[metric] for n in names]
    stds = [results[n].std[metric] for n in names]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(0.9 * len(names) + 1.5, 2.6))
        ax.bar(range(len(names)), means, yerr=stds, color="0.6", capsize=3)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel(metric)
        ax.set_ylim(0, 1)
        if title:
            ax.set_title(title)
        return _save(fig, path)
