"""Multi-region style attention: swap regional styles, then correct them
by attending over the target's regional styles."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .layers import Linear, Module
from .styles import StyleMatrix, class_name
from .tensor import Tensor, matmul, softmax_rows, where


class RegionError(ValueError):
    """A requested region cannot be transferred."""


def compose_swapped(s_t: StyleMatrix, s_r: StyleMatrix, regions: Iterable[int]) -> StyleMatrix:
    """Rows in ``regions`` come from ``s_r``, every other row from ``s_t``."""
    regions = sorted(set(int(r) for r in regions))
    c = s_t.num_classes
    if s_r.styles.shape != s_t.styles.shape:
        raise ValueError(f"style shapes differ: {s_t.styles.shape} vs {s_r.styles.shape}")
    pick = np.zeros(c, dtype=bool)
    for r in regions:
        if not 0 <= r < c:
            raise RegionError(f"region id {r} out of range [0, {c})")
        if not s_r.valid[:, r].all():
            raise RegionError(f"region '{class_name(r)}' is absent from the reference")
        pick[r] = True
    if not regions:
        return s_t
    styles = where(pick[None, :, None], s_r.styles, s_t.styles)
    valid = np.where(pick[None, :], s_r.valid, s_t.valid)
    return StyleMatrix(styles, valid)


class MRSA(Module):
    def __init__(self, style_dim: int, rng: np.random.Generator):
        super().__init__()
        self.wq = Linear(style_dim, style_dim, rng, bias=False)
        self.wk = Linear(style_dim, style_dim, rng, bias=False)
        self.wv = Linear(style_dim, style_dim, rng, bias=False)
        self.alpha = Tensor(np.zeros((), dtype=np.float32), requires_grad=True)

    def attention(self, s_rp: StyleMatrix, s_t: StyleMatrix) -> Tensor:
        """Row-softmax of Q K^T over valid (row, column) region pairs."""
        q = self.wq(s_rp.styles)
        k = self.wk(s_t.styles)
        mask = s_rp.valid[:, :, None] & s_t.valid[:, None, :]
        return softmax_rows(matmul(q, k.transpose(0, 2, 1)), mask)

    def __call__(self, s_rp: StyleMatrix, s_t: StyleMatrix) -> StyleMatrix:
        attn = self.attention(s_rp, s_t)
        correction = matmul(attn, self.wv(s_t.styles))
        out = s_rp.styles + self.alpha * correction
        return StyleMatrix(out, s_rp.valid)


def attend(s_rp: StyleMatrix, s_t: StyleMatrix, params: MRSA) -> StyleMatrix:
    return params(s_rp, s_t)


def mrsa_ablation_passthrough(s_rp: StyleMatrix) -> StyleMatrix:
    return s_rp
