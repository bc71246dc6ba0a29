"""Central finite-difference verification of analytic gradients in 64-bit."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import NonFiniteError, Tensor, default_dtype, record_branches


def _loss_value(f: Callable[[], Tensor]) -> tuple[float, list]:
    with record_branches() as branches:
        out = f()
    value = float(np.asarray(out.data, dtype=np.float64).sum())
    if not np.isfinite(value):
        raise NonFiniteError(f"grad_check: loss evaluated to {value}")
    return value, branches


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor] | dict[str, Tensor],
    h: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    per_param: bool = False,
    skip_kinks: bool = True,
    report: dict | None = None,
):
    """Max over ``params`` of |analytic - central difference| / max(1e-8, |central difference|).

    ``f`` is re-evaluated with every parameter cast to float64.  When
    ``max_entries`` is set, that many coordinates per tensor are probed
    (chosen with ``seed``); otherwise all of them.  Parameters are restored
    to their original dtype and values afterwards.

    With ``skip_kinks``, a coordinate whose +-h probe flips the branch of any
    relu / leaky_relu / abs element is not differentiable along the probe;
    it is skipped and, when sampling, replaced by another coordinate.  The
    number skipped per tensor is written to ``report['skipped']``.
    """
    named = dict(params) if isinstance(params, dict) else {f"p{i}": p for i, p in enumerate(params)}
    originals = {k: (p.data, p.requires_grad, p.grad) for k, p in named.items()}
    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    skipped: dict[str, int] = {}
    try:
        for p in named.values():
            p.data = p.data.astype(np.float64)
            p.requires_grad = True
            p.grad = None
        with default_dtype(np.float64):
            with record_branches() as base_branches:
                out = f()
            if not np.all(np.isfinite(out.data)):
                raise NonFiniteError("grad_check: non-finite loss at the base point")
            if out.requires_grad:
                out.backward(np.ones_like(out.data))
            analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in named.items()}
            for k, p in named.items():
                flat = p.data.reshape(-1)
                order = np.arange(flat.size)
                want = flat.size
                if max_entries is not None and flat.size > max_entries:
                    order = rng.permutation(flat.size)
                    want = max_entries
                worst, probed, skips = 0.0, 0, 0
                a_flat = analytic[k].reshape(-1)
                for i in order:
                    if probed >= want:
                        break
                    old = flat[i]
                    flat[i] = old + h
                    fp, bp = _loss_value(f)
                    flat[i] = old - h
                    fm, bm = _loss_value(f)
                    flat[i] = old
                    if skip_kinks and (bp != base_branches or bm != base_branches):
                        skips += 1
                        continue
                    probed += 1
                    numeric = (fp - fm) / (2 * h)
                    err = abs(a_flat[i] - numeric) / max(1e-8, abs(numeric))
                    worst = max(worst, float(err))
                if probed == 0 and flat.size:
                    raise NonFiniteError(f"grad_check: every probed coordinate of '{k}' sits on a kink")
                errors[k] = worst
                skipped[k] = skips
    finally:
        for k, p in named.items():
            p.data, p.requires_grad, p.grad = originals[k]
    if report is not None:
        report["skipped"] = skipped
    if per_param:
        return errors
    return max(errors.values(), default=0.0)
