"""Matplotlib figures for the report; callers write the matching data tables."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def learning_curves(curves: dict, path, title: str = "") -> Path:
    epochs = np.arange(1, len(curves["train_loss"]) + 1)
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, curves["train_loss"], label="train")
    ax_loss.plot(epochs, curves["val_loss"], label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_acc.plot(epochs, curves["train_accuracy"], label="train")
    ax_acc.plot(epochs, curves["val_accuracy"], label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.legend()
    fig.suptitle(title)
    return _save(fig, path)


def accuracy_bars(rows, path) -> Path:
    """``rows`` are ``[target, model, mean, std, ...]``; one bar group per target."""
    targets = sorted({r[0] for r in rows})
    models = sorted({r[1] for r in rows})
    lookup = {(r[0], r[1]): (r[2], r[3]) for r in rows}
    width = 0.8 / max(len(models), 1)
    fig, ax = plt.subplots(figsize=(max(5, 1.6 * len(targets) + 0.3 * len(models)), 4))
    x = np.arange(len(targets))
    for j, m in enumerate(models):
        vals = [lookup.get((t, m), (np.nan, 0.0)) for t in targets]
        ax.bar(x + j * width, [100 * v[0] for v in vals], width,
               yerr=[100 * (v[1] or 0.0) for v in vals], capsize=3, label=m)
    ax.set_xticks(x + width * (len(models) - 1) / 2)
    ax.set_xticklabels(targets, rotation=15)
    ax.set_ylabel("overall accuracy (%)")
    ax.legend(fontsize=7)
    return _save(fig, path)


def pvalue_heatmap(pmat: dict, names, path, title: str = "") -> Path:
    n = len(names)
    grid = np.array([[np.nan if pmat[a][b] is None else pmat[a][b] for b in names] for a in names])
    fig, ax = plt.subplots(figsize=(1.2 + 0.8 * n, 1.0 + 0.7 * n))
    im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(n))
    ax.set_yticks(range(n))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    ax.set_yticklabels(names, fontsize=7)
    for i in range(n):
        for j in range(n):
            if not np.isnan(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.3f}", ha="center", va="center", fontsize=6,
                        color="w" if grid[i, j] < 0.5 else "k")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    return _save(fig, path)


def precision_recall(rows, path, title: str = "") -> Path:
    """``rows`` are ``[class, p_mean, p_std, r_mean, r_std]``; missing values drawn as 0."""
    classes = [r[0] for r in rows]
    x = np.arange(len(classes))
    fig, ax = plt.subplots(figsize=(max(4, 1.1 * len(classes)), 3.5))
    for off, (mi, si, label) in zip((-0.2, 0.2), ((1, 2, "precision"), (3, 4, "recall"))):
        ax.bar(x + off, [r[mi] or 0.0 for r in rows], 0.4,
               yerr=[r[si] or 0.0 for r in rows], capsize=3, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels(classes, fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.legend()
    ax.set_title(title)
    return _save(fig, path)


def mpca_summary(rows, path) -> Path:
    """``rows`` are ``[target, model, mean, std]``."""
    fig, ax = plt.subplots(figsize=(max(4, 1.3 * len(rows)), 3.5))
    x = np.arange(len(rows))
    ax.bar(x, [r[2] or 0.0 for r in rows], yerr=[r[3] or 0.0 for r in rows], capsize=3)
    ax.set_xticks(x)
    ax.set_xticklabels([f"{r[0]}\n{r[1]}" for r in rows], fontsize=7)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("MPCA")
    return _save(fig, path)
