"""File-based figures and map renderings for the CLI report paths.

Everything here is display-only: min-max normalization and plotting never
feed back into scoring.  PNG metadata is pinned so identical inputs produce
identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

__all__ = ["save_map_png", "save_train_curves", "save_category_bars"]

_PNG_META = {"Software": "spips"}


def save_map_png(arr, path) -> None:
    """Write a 2-D array as a min-max normalized grayscale PNG.

    A constant map renders as all black.
    """
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"map image must be 2-D, got shape {a.shape}")
    lo = float(a.min())
    hi = float(a.max())
    if hi > lo:
        a = (a - lo) / (hi - lo)
    else:
        a = np.zeros_like(a)
    Image.fromarray(np.round(a * 255.0).astype(np.uint8), mode="L").save(
        path, format="PNG"
    )


def save_train_curves(report, path) -> None:
    """Loss and held-out accuracy curves from a TrainReport."""
    epochs = np.arange(1, len(report.epoch_losses) + 1)
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, report.epoch_losses, label="train")
    ax_loss.plot(epochs, report.val_losses, label="val")
    ax_loss.axvline(report.best_epoch + 1, color="gray", linestyle=":", linewidth=1)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_acc.plot(epochs, report.val_accuracies, color="tab:green")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("val 2AFC accuracy")
    ax_acc.set_ylim(0.0, 1.0)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def save_category_bars(report, path) -> None:
    """Grouped bars of plcc/srcc/krcc per category from a CorrelationReport."""
    categories = list(report.categories)
    fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * len(categories) + 2.0), 3.5))
    if categories:
        x = np.arange(len(categories), dtype=np.float64)
        width = 0.25
        for offset, name in ((-width, "plcc"), (0.0, "srcc"), (width, "krcc")):
            values = [getattr(report.categories[c], name) for c in categories]
            ax.bar(x + offset, values, width, label=name)
        ax.set_xticks(x)
        ax.set_xticklabels(categories)
    ax.set_ylim(-1.0, 1.0)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
