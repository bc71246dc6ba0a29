"""Spectral normalization by power iteration."""

from __future__ import annotations

import numpy as np

from .core import Tensor, make


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def spectral_normalize(weight: Tensor, u: np.ndarray, iters: int = 1) -> tuple[Tensor, np.ndarray]:
    """Divide ``weight`` by its largest singular value.

    ``weight`` is viewed as a (Dout, rest) matrix.  ``u`` is the persisted
    left-singular-vector estimate; ``iters`` power-iteration steps refine it
    before normalizing (0 keeps it fixed, as needed for gradient checks).
    The returned sigma is ``|W^T u|``, so the gradient through it is exact
    for the given ``u``.
    """
    wmat = weight.data.reshape(weight.shape[0], -1).astype(np.float64)
    u = np.asarray(u, dtype=np.float64)
    for _ in range(iters):
        v = _unit(wmat.T @ u)
        u = _unit(wmat @ v)
    wtu = wmat.T @ u
    sigma = float(np.linalg.norm(wtu))
    if sigma == 0.0:
        return weight, u.astype(np.float32)
    v = wtu / sigma
    dtype = weight.dtype
    out = (weight.data / dtype.type(sigma)).astype(dtype)
    uv = np.outer(u, v).reshape(weight.shape).astype(dtype)

    def backward(g):
        return ((g - (g * out).sum() * uv) / dtype.type(sigma),)

    return make(out, (weight,), backward, "spectral_normalize"), u.astype(np.float32)
