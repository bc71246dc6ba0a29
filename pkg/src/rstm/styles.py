"""Per-region style matrices shared by the encoder, MRSA and decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import CLASS_NAMES
from .tensor import Tensor, gather_rows, matmul, resize_labels, where


@dataclass
class StyleMatrix:
    """Batched C x D style rows plus per-region validity.

    ``styles`` has shape (N, C, D); ``valid`` is an (N, C) boolean array.
    Rows with ``valid == False`` are exactly zero.
    """

    styles: Tensor
    valid: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.styles.shape[1]

    def detach(self) -> "StyleMatrix":
        return StyleMatrix(self.styles.detach(), self.valid.copy())


def class_name(c: int) -> str:
    return CLASS_NAMES[c] if 0 <= c < len(CLASS_NAMES) else f"class_{c}"


def region_indicators(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """(N, H, W) labels -> (N, C, H*W) 0/1 membership rows."""
    flat = labels.reshape(labels.shape[0], -1)
    return (flat[:, None, :] == np.arange(num_classes)[None, :, None]).astype(dtype)


def region_avg_pool(features: Tensor, labels: np.ndarray, num_classes: int, project=None) -> StyleMatrix:
    """Mean feature vector of every region, optionally mapped by ``project``.

    ``labels`` (N, H, W) is nearest-resized to the feature resolution first.
    Absent regions give a zero row and ``valid = False``.
    """
    n, ch, h, w = features.shape
    small = resize_labels(labels, h, w)
    member = region_indicators(small, num_classes, features.dtype)
    counts = member.sum(axis=2)
    valid = counts > 0
    weights = member / np.maximum(counts, 1)[:, :, None]
    flat = features.reshape(n, ch, h * w).transpose(0, 2, 1)
    pooled = matmul(Tensor(weights), flat)
    if project is not None:
        # select rather than multiply, so absent rows are +0.0 and never -0.0
        pooled = where(valid[:, :, None], project(pooled), Tensor(np.zeros((), dtype=features.dtype)))
    return StyleMatrix(pooled, valid)


def broadcast_style(style: StyleMatrix | Tensor, labels: np.ndarray, out_h: int, out_w: int) -> Tensor:
    """Style map (N, D, H, W) whose pixel (h, w) is the row of its class."""
    styles = style.styles if isinstance(style, StyleMatrix) else style
    n, c, d = styles.shape
    small = resize_labels(labels, out_h, out_w)
    index = small.reshape(n, -1)
    member = region_indicators(small, c, styles.dtype)
    out = gather_rows(styles, index, member)
    return out.transpose(0, 2, 1).reshape(n, d, out_h, out_w)
