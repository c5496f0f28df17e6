"""Report figures, rendered off-screen to PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _series(rows, key):
    steps, vals = [], []
    for r in rows:
        v = r.get(key, "")
        if v not in ("", None):
            steps.append(int(r["step"]))
            vals.append(float(v))
    return steps, vals


def training_curves(rows: list[dict], path: Path) -> Path:
    """Loss terms and the pre-clip gradient norm against step."""
    fig, (ax_loss, ax_norm) = plt.subplots(1, 2, figsize=(10, 3.5))
    for key in ("loss", "photometric", "appearance", "pixel_accuracy"):
        steps, vals = _series(rows, key)
        if vals:
            ax_loss.plot(steps, vals, label=key, lw=1)
    ax_loss.set_xlabel("step")
    ax_loss.set_yscale("log")
    ax_loss.legend(fontsize=8)
    steps, vals = _series(rows, "grad_norm")
    ax_norm.plot(steps, vals, lw=1, color="tab:gray")
    ax_norm.axhline(1.0, ls="--", lw=0.8, color="tab:red")
    ax_norm.set_xlabel("step")
    ax_norm.set_ylabel("grad norm (pre-clip)")
    ax_norm.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def depth_samples(images, preds, gts, path: Path, limit: int = 4) -> Path:
    n = min(limit, len(images))
    fig, axes = plt.subplots(n, 3, figsize=(7, 2.3 * n), squeeze=False)
    for i in range(n):
        vmax = float(np.max(gts[i]))
        axes[i, 0].imshow(np.clip(np.transpose(images[i], (1, 2, 0)), 0, 1))
        axes[i, 1].imshow(preds[i], vmin=0, vmax=vmax, cmap="magma_r")
        axes[i, 2].imshow(gts[i], vmin=0, vmax=vmax, cmap="magma_r")
    for ax, title in zip(axes[0], ("input", "predicted depth", "ground truth")):
        ax.set_title(title, fontsize=9)
    for ax in axes.flat:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def segmentation_samples(images, preds, gts, num_classes: int, path: Path, limit: int = 4) -> Path:
    n = min(limit, len(images))
    fig, axes = plt.subplots(n, 3, figsize=(7, 2.3 * n), squeeze=False)
    for i in range(n):
        axes[i, 0].imshow(np.clip(np.transpose(images[i], (1, 2, 0)), 0, 1))
        axes[i, 1].imshow(preds[i], vmin=0, vmax=num_classes - 1, cmap="tab10", interpolation="nearest")
        axes[i, 2].imshow(gts[i], vmin=0, vmax=num_classes - 1, cmap="tab10", interpolation="nearest")
    for ax, title in zip(axes[0], ("input", "predicted labels", "ground truth")):
        ax.set_title(title, fontsize=9)
    for ax in axes.flat:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
