"""Finite-difference gradient checks for every differentiable op and the
composed network pieces, shared by the test suite and ``rstm grad-check``."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .decoder import Decoder, DecoderConfig, SeanBlock
from .discriminators import ImageDiscriminator
from .encoder import EncoderConfig, MultiScaleEncoder
from .layers import Module
from .losses import feature_matching, hinge_losses
from .model import Generator, ModelConfig
from .mrsa import MRSA
from .styles import StyleMatrix, broadcast_style, region_avg_pool
from .tensor import Tensor

TOLERANCE = 1e-4
STEP = 1e-4


@dataclass
class CheckResult:
    module: str
    name: str
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


def _t(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _away_from_zero(rng, *shape, margin=0.05) -> Tensor:
    """Values with |x| >= margin so piecewise ops are not probed at their kink."""
    x = rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(x, requires_grad=True)


def _weighted(out: Tensor, rng) -> Tensor:
    """Random linear functional of ``out`` so every output coordinate matters."""
    w = Tensor(rng.standard_normal(out.shape))
    return T.sum_(out * w)


SHAPES = ((2, 3), (4,), (2, 3, 5))


def _elementwise_checks():
    def unary(op, positive=False, kink=False):
        def run(rng):
            worst = 0.0
            for shape in SHAPES:
                if positive:
                    x = _t(rng, *shape, lo=0.2, hi=2.0)
                elif kink:
                    x = _away_from_zero(rng, *shape)
                else:
                    x = _t(rng, *shape, lo=-2.0, hi=2.0)
                w = rng.standard_normal(shape)
                worst = max(worst, T.grad_check(lambda: T.sum_(op(x) * Tensor(w)), [x], h=STEP))
            return worst

        return run

    def binary(op, positive_b=False):
        def run(rng):
            worst = 0.0
            for shape in SHAPES:
                a = _t(rng, *shape)
                b = _t(rng, *shape, lo=0.5, hi=2.0) if positive_b else _t(rng, *shape)
                bb = _t(rng, shape[-1], lo=0.5, hi=2.0) if positive_b else _t(rng, shape[-1])
                w = rng.standard_normal(shape)
                worst = max(worst, T.grad_check(lambda: T.sum_(op(a, b) * Tensor(w)), [a, b], h=STEP))
                worst = max(worst, T.grad_check(lambda: T.sum_(op(a, bb) * Tensor(w)), [a, bb], h=STEP))
            return worst

        return run

    return {
        "relu": unary(T.relu, kink=True),
        "leaky_relu": unary(lambda x: T.leaky_relu(x, 0.2), kink=True),
        "sigmoid": unary(T.sigmoid),
        "tanh": unary(T.tanh),
        "exp": unary(T.exp),
        "log": unary(T.log, positive=True),
        "softplus": unary(T.softplus),
        "abs": unary(T.abs_, kink=True),
        "scale": unary(lambda x: T.scale(x, -2.5)),
        "add": binary(T.add),
        "sub": binary(T.sub),
        "mul": binary(T.mul),
        "div": binary(T.div, positive_b=True),
    }


def _structural_checks():
    def reductions(rng):
        worst = 0.0
        for shape, axis in (((3, 4), 0), ((2, 3, 4), (1, 2)), ((5,), None)):
            x = _t(rng, *shape)
            for op in (T.sum_, T.mean):
                f = lambda: _weighted(op(x, axis=axis, keepdims=True), np.random.default_rng(0))
                worst = max(worst, T.grad_check(f, [x]))
        return worst

    def matmul(rng):
        worst = 0.0
        for sa, sb in (((3, 4), (4, 2)), ((2, 3, 4), (2, 4, 5)), ((2, 3, 4), (4, 1))):
            a, b = _t(rng, *sa), _t(rng, *sb)
            worst = max(worst, T.grad_check(lambda: _weighted(T.matmul(a, b), np.random.default_rng(1)), [a, b]))
        return worst

    def concat(rng):
        worst = 0.0
        for axis, shapes in ((0, ((2, 3), (1, 3))), (1, ((2, 3, 2), (2, 1, 2), (2, 2, 2))), (-1, ((4, 1), (4, 3)))):
            ts = [_t(rng, *s) for s in shapes]
            worst = max(worst, T.grad_check(lambda: _weighted(T.concat(ts, axis=axis), np.random.default_rng(2)), ts))
        return worst

    def shape_ops(rng):
        x = _t(rng, 2, 3, 4)
        f = lambda: _weighted(T.getitem(T.transpose(T.reshape(x, (4, 6)), (1, 0)), np.s_[1:5, ::2]), np.random.default_rng(3))
        return T.grad_check(f, [x])

    def where(rng):
        a, b = _t(rng, 3, 4), _t(rng, 3, 4)
        cond = rng.random((3, 4)) > 0.5
        return T.grad_check(lambda: _weighted(T.where(cond, a, b), np.random.default_rng(4)), [a, b])

    def gather_rows(rng):
        table = _t(rng, 2, 5, 3)
        idx = rng.integers(0, 5, size=(2, 7))
        onehot = (idx[:, None, :] == np.arange(5)[None, :, None]).astype(np.float64)
        return T.grad_check(lambda: _weighted(T.gather_rows(table, idx, onehot), np.random.default_rng(5)), [table])

    return {
        "sum/mean": reductions,
        "matmul": matmul,
        "concat": concat,
        "reshape/transpose/getitem": shape_ops,
        "where": where,
        "gather_rows": gather_rows,
    }


def _nn_checks():
    def conv2d(rng):
        worst = 0.0
        for (n, cin, h, w), (cout, k), stride, pad in (
            ((2, 3, 6, 6), (4, 3), 1, 1),
            ((1, 2, 7, 5), (3, 3), 2, 1),
            ((2, 4, 5, 5), (2, 1), 1, 0),
        ):
            x, wt, b = _t(rng, n, cin, h, w), _t(rng, cout, cin, k, k), _t(rng, cout)
            f = lambda: _weighted(T.conv2d(x, wt, b, stride=stride, pad=pad), np.random.default_rng(6))
            worst = max(worst, T.grad_check(f, [x, wt, b]))
        return worst

    def linear(rng):
        worst = 0.0
        for n, din, dout in ((3, 5, 4), (1, 2, 6), (4, 3, 3)):
            x, wt, b = _t(rng, n, din), _t(rng, dout, din), _t(rng, dout)
            worst = max(worst, T.grad_check(lambda: _weighted(T.linear(x, wt, b), np.random.default_rng(7)), [x, wt, b]))
        return worst

    def softmax_rows(rng):
        worst = 0.0
        for r, c in ((4, 6), (1, 3), (3, 8)):
            x = _t(rng, r, c, lo=-3, hi=3)
            mask = rng.random((r, c)) > 0.3
            mask[:, 0] = True
            worst = max(worst, T.grad_check(lambda: _weighted(T.softmax_rows(x), np.random.default_rng(8)), [x]))
            worst = max(worst, T.grad_check(lambda: _weighted(T.softmax_rows(x, mask), np.random.default_rng(8)), [x]))
        return worst

    def resize(rng):
        worst = 0.0
        for (h, w), (oh, ow) in (((4, 4), (8, 8)), ((5, 3), (2, 7)), ((6, 6), (3, 3))):
            x = _t(rng, 1, 2, h, w)
            for mode in ("nearest", "bilinear"):
                f = lambda: _weighted(T.resize(x, oh, ow, mode), np.random.default_rng(9))
                worst = max(worst, T.grad_check(f, [x]))
        return worst

    def instance_norm(rng):
        worst = 0.0
        for shape in ((2, 3, 4, 4), (1, 1, 3, 5), (2, 2, 2, 2)):
            x = _t(rng, *shape)
            worst = max(worst, T.grad_check(lambda: _weighted(T.instance_norm(x), np.random.default_rng(10)), [x]))
        return worst

    def spectral(rng):
        worst = 0.0
        for shape in ((6, 4), (3, 3), (2, 5)):
            w = _t(rng, *shape)
            u = rng.standard_normal(shape[0])
            u /= np.linalg.norm(u)
            _, u = T.spectral_normalize(Tensor(w.data), u, iters=30)
            f = lambda: _weighted(T.spectral_normalize(w, u, iters=0)[0], np.random.default_rng(11))
            worst = max(worst, T.grad_check(f, [w]))
        return worst

    return {
        "conv2d": conv2d,
        "linear": linear,
        "softmax_rows": softmax_rows,
        "resize": resize,
        "instance_norm": instance_norm,
        "spectral_normalize": spectral,
    }


def _params64(module: Module) -> dict[str, Tensor]:
    return dict(module.named_parameters())


def _toy_inputs(rng, n=1, size=16, num_classes=8):
    images = Tensor(rng.uniform(0, 1, size=(n, 3, size, size)))
    labels = np.zeros((n, size, size), dtype=np.int64)
    # a few rectangles so several regions are present
    for c, (y0, y1, x0, x1) in enumerate(((2, 14, 3, 13), (1, 6, 2, 14), (6, 8, 4, 7), (6, 8, 9, 12)), start=1):
        labels[:, y0:y1, x0:x1] = c
    return images, labels


def _small_model(size=16) -> ModelConfig:
    return ModelConfig(
        image_size=size,
        style_dim=8,
        enc_channels=[4, 6, 6, 6],
        fuse_channels=6,
        dec_const_channels=6,
        dec_channels=[6, 4],
    )


def _composed_checks(max_entries: int):
    def encoder_pool(rng):
        cfg = EncoderConfig(image_size=16, channels=[4, 6, 6, 6], fuse_channels=6, style_dim=8)
        enc = MultiScaleEncoder(cfg, rng).eval()
        images, labels = _toy_inputs(rng)
        images.requires_grad = True
        params = {"image": images, **_params64(enc)}
        f = lambda: _weighted(enc(images, labels).styles, np.random.default_rng(12))
        return T.grad_check(f, params, max_entries=max_entries)

    def region_pool_broadcast(rng):
        feats = _t(rng, 2, 5, 6, 6)
        labels = rng.integers(0, 4, size=(2, 12, 12))
        from .layers import Linear

        proj = Linear(5, 3, rng)
        params = {"features": feats, **_params64(proj)}

        def f():
            s = region_avg_pool(feats, labels, 4, proj)
            return _weighted(broadcast_style(s, labels, 6, 6), np.random.default_rng(13))

        return T.grad_check(f, params)

    def mrsa(rng):
        m = MRSA(8, rng)
        m.alpha.data = np.asarray(0.7)
        s_r, s_t = _t(rng, 2, 5, 8), _t(rng, 2, 5, 8)
        valid = np.ones((2, 5), dtype=bool)
        valid[1, 3] = False
        mask = Tensor(valid[:, :, None].astype(np.float64))
        params = {"s_r": s_r, "s_t": s_t, **_params64(m)}

        def f():
            out = m(StyleMatrix(s_r * mask, valid), StyleMatrix(s_t * mask, valid))
            return _weighted(out.styles, np.random.default_rng(14))

        return T.grad_check(f, params)

    def sean(rng):
        block = SeanBlock(4, 3, 6, 5, rng)
        block.blend_gamma.data = rng.standard_normal(block.blend_gamma.shape)
        block.blend_beta.data = rng.standard_normal(block.blend_beta.shape)
        x = _t(rng, 1, 4, 8, 8)
        style_map = _t(rng, 1, 6, 8, 8)
        onehot = T.one_hot(rng.integers(0, 5, size=(1, 8, 8)), 5, np.float64)
        params = {"x": x, "style_map": style_map, **_params64(block)}
        f = lambda: _weighted(block(x, style_map, onehot), np.random.default_rng(15))
        return T.grad_check(f, params, max_entries=max_entries)

    def decoder(rng):
        cfg = DecoderConfig(image_size=16, const_channels=6, channels=[6, 4], style_dim=8, num_classes=8)
        dec = Decoder(cfg, rng)
        _, labels = _toy_inputs(rng)
        styles = _t(rng, 1, 8, 8)
        params = {"styles": styles, **_params64(dec)}
        valid = np.ones((1, 8), dtype=bool)
        f = lambda: _weighted(dec(StyleMatrix(styles, valid), labels), np.random.default_rng(16))
        return T.grad_check(f, params, max_entries=max_entries)

    def reconstruction(rng):
        G = Generator(_small_model(), rng).eval()
        G.mrsa.alpha.data = np.asarray(0.5)
        images, labels = _toy_inputs(rng)
        def f():
            diff = G.reconstruct(images, labels) - images
            return T.mean(diff * diff)

        return T.grad_check(f, _params64(G), max_entries=max_entries)

    def discriminator(rng):
        D = ImageDiscriminator(4, rng, channels=(4, 6, 6, 8)).eval()
        images = _t(rng, 2, 3, 16, 16, lo=0, hi=1)
        labels = rng.integers(0, 4, size=(2, 16, 16))
        params = {"image": images, **_params64(D)}

        def f():
            logits, feats = D(images, labels)
            w = np.random.default_rng(17)
            total = _weighted(logits[0], w) + _weighted(logits[1], w)
            for scale in feats:
                for t in scale:
                    total = total + _weighted(t, w)
            return total

        return T.grad_check(f, params, max_entries=max_entries)

    def fm(rng):
        real = [[Tensor(rng.standard_normal((2, 3, 4, 4))), Tensor(rng.standard_normal((2, 5, 2, 2)))] for _ in range(2)]
        fake = [[_away_from_zero(rng, *t.shape) for t in scale] for scale in real]
        for scale_r, scale_f in zip(real, fake):
            for r, fk in zip(scale_r, scale_f):
                fk.data = r.data + fk.data  # |fake - real| >= margin everywhere
        return T.grad_check(lambda: feature_matching(real, fake), [t for scale in fake for t in scale])

    def gan_losses(rng):
        r = [_away_from_zero(rng, 2, 1, 3, 3), _away_from_zero(rng, 2, 1, 2, 2)]
        fk = [_away_from_zero(rng, 2, 1, 3, 3), _away_from_zero(rng, 2, 1, 2, 2)]
        # keep logits away from the +-1 hinge corners as well
        for t in r + fk:
            t.data = np.where(np.abs(np.abs(t.data) - 1) < 0.05, t.data * 1.2, t.data)

        def f():
            ld, lg = hinge_losses(r, fk)
            # unequal weights: ld + lg cancels exactly on fakes above -1
            return ld + lg * 0.37

        return T.grad_check(f, r + fk)

    return {
        "encoder->fusion->pool": encoder_pool,
        "region_avg_pool->broadcast": region_pool_broadcast,
        "mrsa": mrsa,
        "sean_block": sean,
        "decoder": decoder,
        "encoder+mrsa+decoder (16x16 recon)": reconstruction,
        "discriminator": discriminator,
        "feature_matching": fm,
        "hinge_losses": gan_losses,
    }


def _adam_check(rng) -> float:
    """One update of Adam(beta1=0.5, beta2=0.999) against its closed form."""
    p = Tensor(rng.standard_normal(5), requires_grad=True)
    g = rng.standard_normal(5)
    start = p.data.copy()
    opt = T.Adam({"p": p}, lr=0.01)
    p.grad = g.copy()
    opt.step()
    m = 0.5 * g
    v = 0.001 * g * g
    expected = start - 0.01 * (m / 0.5) / (np.sqrt(v / 0.001) + 1e-8)
    return float(np.max(np.abs(p.data - expected) / np.maximum(1e-8, np.abs(expected - start))))


MODULES = ("tensor", "nn", "composed")


def checks(module: str | None = None, max_entries: int = 6) -> dict[str, tuple[str, Callable]]:
    table: dict[str, tuple[str, Callable]] = {}
    if module in (None, "tensor"):
        for k, fn in {**_elementwise_checks(), **_structural_checks()}.items():
            table[k] = ("tensor", fn)
        table["adam_step"] = ("tensor", _adam_check)
    if module in (None, "nn"):
        for k, fn in _nn_checks().items():
            table[k] = ("nn", fn)
    if module in (None, "composed"):
        for k, fn in _composed_checks(max_entries).items():
            table[k] = ("composed", fn)
    if not table:
        raise KeyError(f"unknown grad-check module {module!r}; choose from {', '.join(MODULES)}")
    return table


def run(module: str | None = None, seed: int = 0, max_entries: int = 6) -> list[CheckResult]:
    results = []
    for i, (name, (group, fn)) in enumerate(checks(module, max_entries).items()):
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        err = fn(rng)
        results.append(CheckResult(group, name, float(err), time.perf_counter() - t0))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'module':<9} {'check':<{width}} {'max_rel_err':>12}  status"]
    for r in results:
        lines.append(f"{r.module:<9} {r.name:<{width}} {r.error:>12.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
