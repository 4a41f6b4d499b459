"""Per-class IoU bars and object-size vs IoU scatter from evaluation outputs."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_table(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_per_class(table: str | Path, out: str | Path, title: str = "") -> Path:
    rows = read_table(table)
    names = [r["class_name"] for r in rows]
    values = [float(r["iou"]) for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(rows) + 2), 3.5))
    ax.bar(names, values, color="tab:blue")
    ax.axhline(np.mean(values) if values else 0, color="tab:red", ls="--", lw=1, label="mIoU")
    ax.set_ylabel("IoU (%)")
    ax.set_ylim(0, 100)
    ax.set_title(title or "per-class IoU")
    ax.legend(loc="upper right")
    plt.setp(ax.get_xticklabels(), rotation=30, ha="right")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return Path(out)


def plot_scale(records: str | Path, out: str | Path, image_pixels: int | None = None,
               bins: int = 8) -> Path:
    """Scatter of target area against pair IoU with a binned mean curve."""
    rows = read_table(records)
    area = np.array([float(r["gt_area"]) for r in rows])
    score = np.array([100 * float(r["iou"]) for r in rows])
    if image_pixels:
        area = area / image_pixels
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.scatter(area, score, s=6, alpha=0.35, color="tab:gray")
    if len(area) >= bins:
        edges = np.quantile(area, np.linspace(0, 1, bins + 1))
        which = np.clip(np.searchsorted(edges, area, side="right") - 1, 0, bins - 1)
        centres = [area[which == b].mean() for b in range(bins) if np.any(which == b)]
        means = [score[which == b].mean() for b in range(bins) if np.any(which == b)]
        ax.plot(centres, means, "o-", color="tab:red", label="binned mean")
        ax.legend(loc="lower right")
    ax.set_xlabel("target area" + (" (fraction of image)" if image_pixels else " (pixels)"))
    ax.set_ylabel("IoU (%)")
    ax.set_ylim(-2, 102)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return Path(out)


def overlay(image: np.ndarray, mask: np.ndarray, color=(255, 0, 0), alpha: float = 0.5) -> np.ndarray:
    """Blend a binary ``mask`` over an RGB image in [0, 1] or uint8; returns uint8."""
    img = np.asarray(image, dtype=np.float64)
    if img.max() <= 1.0:
        img = img * 255
    out = img.copy()
    m = np.asarray(mask).astype(bool)
    out[m] = (1 - alpha) * img[m] + alpha * np.asarray(color, dtype=np.float64)
    return np.clip(out + 0.5, 0, 255).astype(np.uint8)
