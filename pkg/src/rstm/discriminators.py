"""Two-scale patch discriminator conditioned on the one-hot mask."""

from __future__ import annotations

import numpy as np

from .layers import Conv2d, Module
from .tensor import Tensor, concat, leaky_relu, one_hot, resize


class PatchDiscriminator(Module):
    def __init__(self, cin: int, rng: np.random.Generator, channels=(32, 64, 128, 256)):
        super().__init__()
        cins = [cin] + list(channels[:-1])
        self.convs = [Conv2d(ci, co, 3, rng, stride=2, sn=True) for ci, co in zip(cins, channels)]
        self.head = Conv2d(channels[-1], 1, 3, rng, sn=True)

    def __call__(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        feats = []
        for conv in self.convs:
            x = leaky_relu(conv(x), 0.2)
            feats.append(x)
        return self.head(x), feats


class ImageDiscriminator(Module):
    """Patch logits and intermediate features at full and half resolution."""

    def __init__(self, num_classes: int, rng: np.random.Generator, channels=(32, 64, 128, 256), num_scales: int = 2):
        super().__init__()
        self.num_classes = num_classes
        self.scales = [PatchDiscriminator(3 + num_classes, rng, channels) for _ in range(num_scales)]

    def __call__(self, images: Tensor, labels: np.ndarray) -> tuple[list[Tensor], list[list[Tensor]]]:
        x = concat([images, Tensor(one_hot(labels, self.num_classes, images.dtype))], axis=1)
        logits, feats = [], []
        for i, disc in enumerate(self.scales):
            if i:
                h, w = x.shape[-2:]
                x = resize(x, max(1, h // 2), max(1, w // 2), "bilinear")
            out, fs = disc(x)
            logits.append(out)
            feats.append(fs)
        return logits, feats
