"""Raster output: field/error heatmap panels and metric-vs-samples curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .domain import ScalarField

__all__ = ["save_field_panel", "save_metric_curves"]

_PNG_META = {"metadata": {"Software": None}}


def save_field_panel(truth: ScalarField, pred: ScalarField, path, title: str = "") -> Path:
    """One row: ground truth, prediction (shared color scale), absolute error."""
    path = Path(path)
    t, p = truth.values, pred.values
    err = np.abs(t - p)
    vmin, vmax = min(t.min(), p.min()), max(t.max(), p.max())
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2))
    for ax, (img, label, kw) in zip(
        axes,
        [
            (t, "ground truth", {"vmin": vmin, "vmax": vmax, "cmap": "inferno"}),
            (p, "prediction", {"vmin": vmin, "vmax": vmax, "cmap": "inferno"}),
            (err, "absolute error", {"cmap": "viridis"}),
        ],
    ):
        im = ax.imshow(img, origin="lower", **kw)
        ax.set_title(label)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120, **_PNG_META)
    plt.close(fig)
    return path


def save_metric_curves(rows: list[dict], path) -> list[float]:
    """MAE and Max-AE against training-set size, one line per method.

    rows carry method, n_train, mae_K, maxae_K. Returns the sorted x values
    actually plotted.
    """
    path = Path(path)
    methods = sorted({r["method"] for r in rows})
    xs = sorted({int(r["n_train"]) for r in rows})
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    for metric, ax in zip(("mae_K", "maxae_K"), axes):
        for method in methods:
            pts = sorted(
                ((int(r["n_train"]), float(r[metric])) for r in rows if r["method"] == method)
            )
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
        ax.set_xlabel("training samples")
        ax.set_ylabel(metric.replace("_K", " (K)"))
        ax.grid(True, alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, **_PNG_META)
    plt.close(fig)
    return xs
