"""Figures written next to training logs and evaluation reports."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def read_loss_log(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def _smooth(y: np.ndarray, window: int) -> np.ndarray:
    if len(y) < window or window < 2:
        return y
    kernel = np.ones(window) / window
    return np.convolve(y, kernel, mode="valid")


def loss_curves(log: dict[str, np.ndarray], out_path, window: int = 25) -> Path:
    """Four panels (G adversarial, FM, perceptual, D) with a running mean."""
    keys = [k for k in ("loss_G_adv", "loss_FM", "loss_perc", "loss_D") if k in log]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(keys), figsize=(3.0 * len(keys), 2.6), squeeze=False)
        steps = log["step"]
        for ax, key in zip(axes[0], keys):
            y = log[key]
            ax.plot(steps, y, color="0.75", lw=0.6)
            ys = _smooth(y, window)
            ax.plot(steps[len(steps) - len(ys) :], ys, color="C0", lw=1.2)
            ax.set_title(key)
            ax.set_xlabel("step")
        fig.tight_layout()
        fig.savefig(out_path)
        plt.close(fig)
    return Path(out_path)


def image_grid(rows: list[np.ndarray], row_titles: list[str], out_path, max_cols: int = 8) -> Path:
    """Rows of (N, H, W, 3) images, one labelled row each."""
    n_cols = min(max_cols, min(len(r) for r in rows))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(rows), n_cols, figsize=(1.2 * n_cols, 1.3 * len(rows)), squeeze=False)
        for i, (imgs, title) in enumerate(zip(rows, row_titles)):
            for j in range(n_cols):
                ax = axes[i, j]
                ax.imshow(np.clip(imgs[j], 0, 1), interpolation="nearest")
                ax.set_xticks([])
                ax.set_yticks([])
                ax.grid(False)
                for s in ax.spines.values():
                    s.set_visible(False)
            axes[i, 0].set_ylabel(title, rotation=0, ha="right", va="center")
        fig.tight_layout()
        fig.savefig(out_path)
        plt.close(fig)
    return Path(out_path)


def eval_summary(psnrs: np.ndarray, hs_groups: dict[str, np.ndarray], out_path) -> Path:
    """PSNR histogram and harmony-score distributions per method."""
    with plt.rc_context(STYLE):
        fig, (a, b) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        a.hist(psnrs, bins=20, color="C0", alpha=0.8)
        a.axvline(float(np.mean(psnrs)), color="k", lw=1, ls="--")
        a.set_xlabel("reconstruction PSNR (dB)")
        a.set_ylabel("images")
        names = list(hs_groups)
        b.boxplot([hs_groups[k] for k in names], showmeans=True)
        b.set_xticks(range(1, len(names) + 1), names)
        b.set_ylim(-0.02, 1.02)
        b.set_ylabel("harmony score")
        fig.tight_layout()
        fig.savefig(out_path)
        plt.close(fig)
    return Path(out_path)


def frechet_bars(before: list[float], after: list[float], labels: list[str], out_path) -> Path:
    """Per-group style Frechet distance at init and after stage-2 training."""
    x = np.arange(len(labels))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 2.8))
        ax.bar(x - 0.2, before, 0.4, label="init")
        ax.bar(x + 0.2, after, 0.4, label="trained")
        ax.set_xticks(x, labels, rotation=20)
        ax.set_yscale("log")
        ax.set_ylabel("style Frechet distance")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_path)
        plt.close(fig)
    return Path(out_path)
