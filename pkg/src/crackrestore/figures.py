"""Matplotlib figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

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
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_history(rows: Sequence[dict], path, best_epoch: int | None = None):
    with plt.rc_context(STYLE):
        fig, (ax_res, ax_adv) = plt.subplots(1, 2, figsize=(8, 3))
        epochs = [r["epoch"] for r in rows]
        for key, label in (("res", "train restoration"), ("val_res", "val restoration")):
            ax_res.plot(epochs, [r[key] for r in rows], marker=".", label=label)
        if best_epoch:
            ax_res.axvline(best_epoch, color="0.5", ls="--", lw=0.8)
        ax_res.set_xlabel("epoch")
        ax_res.set_ylabel("loss")
        ax_res.legend(frameon=False)
        for key, label in (("adv_g", "G adversarial"), ("adv_d", "D adversarial")):
            ax_adv.plot(epochs, [r[key] for r in rows], marker=".", label=label)
        ax_adv.set_xlabel("epoch")
        ax_adv.legend(frameon=False)
        return _save(fig, path)


def plot_detection(image, restored, error, crack_map, path, gt=None, overlay=None):
    panels = [("input", image), ("restored", restored), ("error map", error), ("crack map", crack_map)]
    if overlay is not None:
        panels.append(("TP / FP / FN", overlay))
    elif gt is not None:
        panels.append(("ground truth", gt))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(2.2 * len(panels), 2.4))
        for ax, (title, arr) in zip(axes, panels):
            ax.imshow(arr, cmap=None if np.ndim(arr) == 3 else ("inferno" if title == "error map" else "gray"))
            ax.set_title(title)
            ax.axis("off")
        return _save(fig, path)


def plot_metrics(reports, path, labels: Sequence[str] | None = None):
    """Grouped bars of the five metrics, one group per report."""
    names = ("precision", "recall", "accuracy", "f1", "iou")
    labels = labels or [r.dataset_id or str(i) for i, r in enumerate(reports)]
    x = np.arange(len(names))
    width = 0.8 / max(1, len(reports))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(names) + 0.3 * len(reports)), 3))
        for i, (r, label) in enumerate(zip(reports, labels)):
            ax.bar(x + i * width, [100 * getattr(r, n) for n in names], width, label=label)
        ax.set_xticks(x + width * (len(reports) - 1) / 2, names)
        ax.set_ylabel("%")
        ax.set_ylim(0, 100)
        if len(reports) > 1:
            ax.legend(frameon=False, ncol=2)
        return _save(fig, path)


def plot_mask_pool(pool, path):
    n = len(pool)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, n, figsize=(1.6 * n, 1.9), squeeze=False)
        for ax, mask in zip(axes[0], pool.masks):
            ax.imshow(mask.grid, cmap="gray", vmin=0, vmax=1)
            ax.set_title(f"k={mask.scale_k}")
            ax.axis("off")
        return _save(fig, path)
