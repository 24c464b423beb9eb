"""
Report figures. Everything renders off-screen to PNG files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

REPORT_RC = {
    "font.family": "sans-serif",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}

CLASS_COLORS = {"glaucoma": "#c0392b", "normal": "#2471a3"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training_curves(log: list[dict], path) -> Path:
    with plt.rc_context(REPORT_RC):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(7, 2.8))
        epochs = [r["epoch"] for r in log]
        ax_loss.plot(epochs, [r["train_loss"] for r in log], label="train")
        val = [r["val_loss"] for r in log]
        if any(v is not None for v in val):
            ax_loss.plot(epochs, [np.nan if v is None else v for v in val], label="validation")
            ax_acc.plot(epochs, [np.nan if r["val_accuracy"] is None else r["val_accuracy"]
                                 for r in log], color="C1")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("cross-entropy")
        ax_loss.legend(frameon=False)
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("validation pixel accuracy")
        return _save(fig, path)


def plot_segmentations(images, truths, preds, ids, path, max_rows: int = 4) -> Path:
    """Grid of grayscale input / ground truth / prediction for a few eyes."""
    n = min(len(images), max_rows)
    with plt.rc_context(REPORT_RC):
        fig, axes = plt.subplots(n, 3, figsize=(6, 2 * n), squeeze=False)
        for r in range(n):
            for c, (arr, title) in enumerate(((images[r], "image"), (truths[r], "ground truth"),
                                              (preds[r], "prediction"))):
                ax = axes[r, c]
                if c == 0:
                    ax.imshow(arr, cmap="gray", vmin=0, vmax=255)
                else:
                    ax.imshow(arr, cmap="viridis", vmin=0, vmax=2, interpolation="nearest")
                ax.set_xticks([])
                ax.set_yticks([])
                if r == 0:
                    ax.set_title(title)
            axes[r, 0].set_ylabel(ids[r])
        return _save(fig, path)


def plot_rim_profiles(profiles: dict[str, list[np.ndarray]], path) -> Path:
    """Mean normalized rim profile per class, with quadrant boundaries marked."""
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(figsize=(6, 2.8))
        theta = np.arange(360)
        for label, rows in sorted(profiles.items()):
            if not rows:
                continue
            stack = np.vstack(rows)
            mean = stack.mean(axis=0)
            color = CLASS_COLORS.get(label, "0.4")
            ax.plot(theta, mean, color=color, label=f"{label} (n={len(rows)})")
            if len(rows) > 1:
                sd = stack.std(axis=0)
                ax.fill_between(theta, mean - sd, mean + sd, color=color, alpha=0.15, lw=0)
        for edge in (46, 136, 226, 316):
            ax.axvline(edge, color="0.7", lw=0.6, ls="--")
        for center, name in ((0, "S"), (90, "T"), (180, "I"), (270, "N")):
            ax.text(center + 2, 1.0, name, transform=ax.get_xaxis_transform(), va="top")
        ax.set_xlim(0, 359)
        ax.set_xlabel("angle (degrees, clockwise from top)")
        ax.set_ylabel("rim thickness / disc diameter")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_feature_scatter(rows: list[dict], path) -> Path:
    with plt.rc_context(REPORT_RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7, 3))
        for label in sorted({r["label"] for r in rows}):
            sel = [r for r in rows if r["label"] == label]
            color = CLASS_COLORS.get(label, "0.5")
            ax1.scatter([r["acdr"] for r in sel], [r["dcdr"] for r in sel], s=14,
                        color=color, label=label)
            ax2.scatter([r["s_distance"] for r in sel], [r["i_distance"] for r in sel], s=14,
                        color=color, label=label)
        ax1.set_xlabel("area CDR")
        ax1.set_ylabel("diameter CDR")
        ax2.set_xlabel("S-distance")
        ax2.set_ylabel("I-distance")
        ax1.legend(frameon=False)
        return _save(fig, path)


def plot_confusion(counts, path) -> Path:
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(figsize=(3.2, 3))
        grid = np.array([[counts.tp, counts.fp], [counts.fn, counts.tn]])
        ax.imshow(grid, cmap="Blues")
        for (i, j), v in np.ndenumerate(grid):
            ax.text(j, i, str(v), ha="center", va="center",
                    color="white" if v > grid.max() / 2 else "black")
        ax.set_xticks([0, 1], ["glaucoma", "normal"])
        ax.set_yticks([0, 1], ["glaucoma", "normal"])
        ax.set_xlabel("true condition")
        ax.set_ylabel("predicted condition")
        return _save(fig, path)
