"""Multi-scale convolutional style encoder with softmax-weighted fusion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Conv2d, Linear, Module
from .styles import StyleMatrix, region_avg_pool
from .tensor import Tensor, leaky_relu, resize, softmax_rows


@dataclass
class EncoderConfig:
    image_size: int = 64
    channels: list[int] = field(default_factory=lambda: [32, 64, 128, 128])
    fuse_channels: int = 128
    style_dim: int = 64
    num_classes: int = 8
    use_softmax: bool = True

    @property
    def num_scales(self) -> int:
        return len(self.channels)

    @property
    def unified_resolution(self) -> int:
        return max(1, self.image_size // 4)


class MultiScaleEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        if cfg.num_scales < 1:
            raise ValueError("encoder needs at least one scale")
        self.cfg = cfg
        cins = [3] + cfg.channels[:-1]
        self.convs = [Conv2d(ci, co, 3, rng, stride=2, sn=True) for ci, co in zip(cins, cfg.channels)]
        self.proj = [Conv2d(co, cfg.fuse_channels, 1, rng, sn=True) for co in cfg.channels]
        k = cfg.num_scales
        # Without softmax the raw weights are used as-is, so start them at 1/K.
        init = np.zeros(k) if cfg.use_softmax else np.full(k, 1.0 / k)
        self.fusion_raw = Tensor(init.astype(np.float32), requires_grad=True)
        self.style_linear = Linear(cfg.fuse_channels, cfg.style_dim, rng)

    def pyramid(self, images: Tensor) -> list[Tensor]:
        feats = []
        x = images * 2.0 - 1.0
        for conv in self.convs:
            x = leaky_relu(conv(x), 0.2)
            feats.append(x)
        return feats

    def fusion_weights(self) -> Tensor:
        raw = self.fusion_raw.reshape(1, -1)
        return softmax_rows(raw) if self.cfg.use_softmax else raw

    def fuse(self, pyramid: list[Tensor]) -> Tensor:
        r = self.cfg.unified_resolution
        alpha = self.fusion_weights()
        fused = None
        for i, (feat, proj) in enumerate(zip(pyramid, self.proj)):
            term = proj(resize(feat, r, r, "bilinear")) * alpha[0, i]
            fused = term if fused is None else fused + term
        return fused

    def __call__(self, images: Tensor, labels: np.ndarray) -> StyleMatrix:
        fused = self.fuse(self.pyramid(images))
        return region_avg_pool(fused, labels, self.cfg.num_classes, self.style_linear)
