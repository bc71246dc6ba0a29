"""Neural-network primitives with analytic gradients."""

from __future__ import annotations

import numpy as np

from .core import ShapeError, Tensor, as_tensor, make


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    """Floor-mode output length; raises when the kernel does not fit."""
    span = size + 2 * pad - k
    if span < 0:
        raise ShapeError(f"kernel {k} with pad {pad} does not fit input size {size}")
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation on NCHW input via im2col."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d input {x.shape} and weight {weight.shape} are incompatible")
    n, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel {kh}x{kw} must be odd")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and pad >= 0, got {stride}, {pad}")
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)

    # im2col in channels-last layout: rows ordered (n, ho, wo), columns (kh, kw, cin)
    xn = x.data.transpose(0, 2, 3, 1)
    if pad:
        xn = np.pad(xn, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    hp, wp = xn.shape[1], xn.shape[2]
    if kh == 1 and kw == 1:
        cols = np.ascontiguousarray(xn[:, ::stride, ::stride, :][:, :ho, :wo]).reshape(n * ho * wo, cin)
    else:
        cols6 = np.empty((n, ho, wo, kh, kw, cin), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                cols6[:, :, :, i, j, :] = xn[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
        cols = cols6.reshape(n * ho * wo, kh * kw * cin)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.ascontiguousarray((g2.T @ cols).reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2))
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, kh, kw, cin)
            gxn = np.zeros((n, hp, wp, cin), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxn[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[:, :, :, i, j, :]
            gx = np.ascontiguousarray(gxn[:, pad : pad + h, pad : pad + w, :].transpose(0, 3, 1, 2))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make(out, parents, backward, "conv2d")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis of ``x``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear input {x.shape} and weight {weight.shape} are incompatible")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gx = g @ weight.data
        if weight.requires_grad:
            gw = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1])
        if bias is not None and bias.requires_grad:
            gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make(out, parents, backward, "linear")


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis with max subtraction.

    Entries where ``mask`` is False get probability exactly 0; a row with no
    unmasked entry is all zeros.
    """
    x = as_tensor(x)
    logits = x.data
    if mask is not None:
        mask = np.broadcast_to(mask, logits.shape)
        logits = np.where(mask, logits, -np.inf)
    top = logits.max(axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0)
    e = np.exp(logits - top)
    total = e.sum(axis=-1, keepdims=True)
    out = np.divide(e, total, out=np.zeros_like(e), where=total > 0).astype(x.dtype)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make(out, (x,), backward, "softmax_rows")


def _interp_matrix(n_in: int, n_out: int, mode: str, dtype) -> np.ndarray:
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    if mode == "nearest":
        src = np.floor(np.arange(n_out) * n_in / n_out).astype(int)
        mat[np.arange(n_out), np.minimum(src, n_in - 1)] = 1.0
    elif mode == "bilinear":
        src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        src = np.maximum(src, 0.0)
        i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        lam = src - i0
        rows = np.arange(n_out)
        np.add.at(mat, (rows, i0), 1.0 - lam)
        np.add.at(mat, (rows, i1), lam)
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    return mat.astype(dtype)


def resize(x: Tensor, out_h: int, out_w: int, mode: str = "bilinear") -> Tensor:
    """Resize NCHW maps; bilinear uses the half-pixel (align-corners=false) grid."""
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize target {out_h}x{out_w} must be positive")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return x
    ah = _interp_matrix(h, out_h, mode, x.dtype)
    aw = _interp_matrix(w, out_w, mode, x.dtype)
    out = ah @ x.data @ aw.T

    def backward(g):
        return (ah.T @ g @ aw,)

    return make(out, (x,), backward, f"resize_{mode}")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of NCHW maps."""
    n, c, h, w = x.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, 2, w, 2)).reshape(n, c, 2 * h, 2 * w)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return make(out, (x,), backward, "upsample2x")


def resize_labels(labels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest (floor-index) resize of integer label maps shaped (..., H, W)."""
    h, w = labels.shape[-2:]
    if (h, w) == (out_h, out_w):
        return labels
    rows = np.floor(np.arange(out_h) * h / out_h).astype(int)
    cols = np.floor(np.arange(out_w) * w / out_w).astype(int)
    return labels[..., rows[:, None], cols[None, :]]


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """(N, H, W) int labels -> (N, C, H, W) indicator maps."""
    return (labels[:, None, :, :] == np.arange(num_classes)[None, :, None, None]).astype(dtype)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Parameter-free per-(sample, channel) normalization of NCHW input."""
    x = as_tensor(x)
    if x.shape[2] * x.shape[3] < 2:
        raise ShapeError(f"instance_norm needs at least 2 spatial positions, got {x.shape}")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def backward(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return make(xhat.astype(x.dtype), (x,), backward, "instance_norm")
