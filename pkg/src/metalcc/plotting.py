"""Report figures: mask panels, metric bars and consistency slices."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from metalcc.metrics import METRICS  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "image.interpolation": "nearest",
}

# no timestamp, so reruns give identical files
_META = {"Software": None}


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def mask_panel(projection, gt, pre: dict, post: dict, path, title: str = ""):
    """Two-row panel: projection and pre-CC masks on top, GT and post-CC below.

    ``pre`` and ``post`` map a binarization threshold to a 2D mask.
    """
    thresholds = list(pre)
    n = len(thresholds) + 1
    with plt.rc_context(RC):
        fig, axes = plt.subplots(2, n, figsize=(2.0 * n, 4.2), squeeze=False)
        letters = iter("abcdefghijklmnopqrstuvwxyz")
        top = [(projection, "projection", "gray")] + [(pre[t], f"t={t:g}, no CC", "gray") for t in thresholds]
        bottom = [(gt, "GT", "gray")] + [(post[t], f"t={t:g}, CC", "gray") for t in thresholds]
        panels = top + bottom
        order = [ax for row in axes for ax in row]
        for ax, (img, label, cmap) in zip(order, panels):
            ax.imshow(np.asarray(img), cmap=cmap, origin="lower")
            ax.set_title(f"{next(letters)}) {label}")
            ax.set_xticks([])
            ax.set_yticks([])
        if title:
            fig.suptitle(title)
        fig.tight_layout()
    return save(fig, path)


def metrics_bars(rows, path):
    """Grouped bars of the mean metrics; one color per threshold, CC rows hatched."""
    thresholds = sorted({row.threshold for row in rows})
    colors = {t: f"C{k}" for k, t in enumerate(thresholds)}
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6.4, 3.4))
        width = 0.8 / len(rows)
        x = np.arange(len(METRICS))
        for k, row in enumerate(rows):
            means = [row.report.aggregate[m][0] for m in METRICS]
            stds = [row.report.aggregate[m][1] for m in METRICS]
            label = f"t={row.threshold:g} {'CC' if row.cc else 'no CC'}"
            ax.bar(x + (k - (len(rows) - 1) / 2) * width, means, width, yerr=stds,
                   label=label, capsize=1.5, color=colors[row.threshold],
                   hatch="//" if row.cc else None, edgecolor="k", linewidth=0.4)
        ax.set_xticks(x, ["IoU", "Dice", "Precision", "Recall"])
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("mean over views")
        ax.legend(ncol=1, loc="center left", bbox_to_anchor=(1.01, 0.5), frameon=False)
        fig.tight_layout()
    return save(fig, path)


def consistency_slices(value, path, tau: float | None = None):
    """Central axial and coronal slices of a normalized visitor volume."""
    value = np.asarray(value)
    nz, ny, _ = value.shape
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=(6.0, 3.0))
        for ax, img, label in ((axes[0], value[nz // 2], "axial z=0"),
                               (axes[1], value[:, ny // 2, :], "coronal y=0")):
            im = ax.imshow(img, vmin=0, vmax=1, cmap="viridis", origin="lower")
            if tau is not None and 0 < np.mean(img >= tau) < 1:
                ax.contour(img >= tau, levels=[0.5], colors="w", linewidths=0.6)
            ax.set_title(label)
            ax.set_xticks([])
            ax.set_yticks([])
        fig.colorbar(im, ax=axes, shrink=0.8, label="visits / max visits")
    return save(fig, path)
