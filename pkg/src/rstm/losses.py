"""Image-space losses: hinge adversarial, feature matching, fixed-feature perceptual."""

from __future__ import annotations

import numpy as np

from .layers import Conv2d, Module
from .tensor import Tensor, abs_, leaky_relu, mean, no_grad, relu, sub
from .tensor.core import ShapeError

PERCEPTUAL_LAYER_WEIGHTS = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)


def hinge_losses(real_logits: list[Tensor] | None, fake_logits: list[Tensor]) -> tuple[Tensor | None, Tensor]:
    """(L_D, L_G_adv), each averaged over scales and patches.

    L_D needs ``real_logits``; pass None to get only the generator term.
    """
    scales = len(fake_logits)
    loss_g = None
    for f in fake_logits:
        term = mean(f)
        loss_g = term if loss_g is None else loss_g + term
    loss_g = loss_g * (-1.0 / scales)
    if real_logits is None:
        return None, loss_g
    loss_d = None
    for r, f in zip(real_logits, fake_logits):
        term = mean(relu(1.0 - r)) + mean(relu(1.0 + f))
        loss_d = term if loss_d is None else loss_d + term
    return loss_d * (1.0 / scales), loss_g


def feature_matching(real_feats: list[list[Tensor]], fake_feats: list[list[Tensor]]) -> Tensor:
    """Mean L1 between discriminator features, averaged over layers and scales."""
    terms = []
    for rs, fs in zip(real_feats, fake_feats):
        if len(rs) != len(fs):
            raise ShapeError("feature lists differ in length")
        for r, f in zip(rs, fs):
            if r.shape != f.shape:
                raise ShapeError(f"feature shapes differ: {r.shape} vs {f.shape}")
            terms.append(mean(abs_(sub(f, r.detach()))))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


class FixedFeatureNet(Module):
    """Seeded, never-trained 5-stage conv net standing in for VGG features.

    Inputs are mapped from [0, 1] to [-1, 1]; the default He-uniform init
    keeps activations at a usable scale through all five stages.  Stage 1 is a
    1x1 conv whose 16x3 weight is checked to have full column rank, so
    distinct images always give distinct first-stage features.
    """

    def __init__(self, seed: int = 1234, min_singular: float = 0.2):
        super().__init__()
        while True:
            rng = np.random.default_rng(seed)
            first = Conv2d(3, 16, 1, rng)
            sv = np.linalg.svd(first.weight.data.reshape(16, 3), compute_uv=False)
            if sv.min() > min_singular:
                break
            seed += 1
        self.seed = seed
        self.layers = [
            first,
            Conv2d(16, 32, 3, rng, stride=2),
            Conv2d(32, 64, 3, rng, stride=2),
            Conv2d(64, 64, 3, rng, stride=2),
            Conv2d(64, 64, 3, rng, stride=2),
        ]
        self.requires_grad_(False)

    def __call__(self, x: Tensor) -> list[Tensor]:
        x = x * 2.0 - 1.0
        feats = []
        for layer in self.layers:
            x = leaky_relu(layer(x), 0.2)
            feats.append(x)
        return feats


def perceptual_loss(real: Tensor, fake: Tensor, net: FixedFeatureNet) -> Tensor:
    if real.shape != fake.shape:
        raise ShapeError(f"perceptual_loss shapes differ: {real.shape} vs {fake.shape}")
    fake_feats = net(fake)
    if real.requires_grad:
        real_feats = net(real)
    else:
        with no_grad():
            real_feats = net(real)
    total = None
    for w, r, f in zip(PERCEPTUAL_LAYER_WEIGHTS, real_feats, fake_feats):
        term = mean(abs_(sub(f, r))) * w
        total = term if total is None else total + term
    return total
