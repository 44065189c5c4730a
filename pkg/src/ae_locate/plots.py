"""Static figure export (PNG, headless, no embedded timestamps)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sim import PlateSpec  # noqa: E402

_META = {"Software": None}


def speed_histogram(speeds, path, bins: int = 50) -> np.ndarray:
    """Histogram of pairwise TDOA speeds; returns the bin counts."""
    speeds = np.asarray(speeds, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 4))
    counts, _, _ = ax.hist(speeds, bins=bins, color="0.35", edgecolor="white", linewidth=0.4)
    ax.axvline(0.0, color="tab:red", lw=0.8, ls="--")
    ax.set_xlabel("pairwise propagation speed [m/s]")
    ax.set_ylabel("count")
    ax.set_title(f"TDOA speeds (n={speeds.size})")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return counts


def detection_scatter(true_mm, pred_mm, plate: PlateSpec, path) -> None:
    true_mm, pred_mm = np.asarray(true_mm), np.asarray(pred_mm)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, plate.width, plate.width, 0, 0], [0, 0, plate.height, plate.height, 0], color="k", lw=1)
    for (tx, ty), (px, py) in zip(true_mm, pred_mm):
        ax.plot([tx, px], [ty, py], color="0.6", lw=0.6)
    ax.scatter(true_mm[:, 0], true_mm[:, 1], s=14, marker="o", facecolors="none", edgecolors="k",
               label="true")
    ax.scatter(pred_mm[:, 0], pred_mm[:, 1], s=10, marker="x", color="tab:red", label="predicted")
    ax.set_aspect("equal")
    ax.set_xlabel("x [mm]")
    ax.set_ylabel("y [mm]")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)


def scalogram_heatmap(channels, path) -> None:
    channels = np.asarray(channels)
    fig, axes = plt.subplots(1, channels.shape[0], figsize=(3 * channels.shape[0], 3))
    for c, ax in enumerate(np.atleast_1d(axes)):
        ax.imshow(channels[c], aspect="auto", origin="upper", cmap="viridis", vmin=0.0, vmax=1.0)
        ax.set_title(f"sensor {c}")
        ax.set_xlabel("time")
        ax.set_ylabel("scale")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
