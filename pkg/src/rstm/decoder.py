"""Region-adaptive normalization decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Conv2d, Module
from .styles import StyleMatrix, broadcast_style
from .tensor import (
    Tensor,
    add,
    getitem,
    instance_norm,
    leaky_relu,
    one_hot,
    resize_labels,
    sigmoid,
    tanh,
    upsample2x,
)


@dataclass
class DecoderConfig:
    image_size: int = 64
    const_channels: int = 128
    channels: list[int] = field(default_factory=lambda: [128, 128, 64, 32])
    style_dim: int = 64
    num_classes: int = 8

    @property
    def start_resolution(self) -> int:
        return self.image_size // 2 ** len(self.channels)


class SeanBlock(Module):
    """Normalize, modulate with blended style/mask scale and shift, then
    conv, leaky-relu and 2x nearest upsampling."""

    def __init__(self, cin: int, cout: int, style_dim: int, num_classes: int, rng: np.random.Generator):
        super().__init__()
        self.cin = cin
        self.style_conv = Conv2d(style_dim, 2 * cin, 1, rng)
        self.mask_conv = Conv2d(num_classes, 2 * cin, 3, rng)
        self.blend_gamma = Tensor(np.zeros((1, cin, 1, 1), dtype=np.float32), requires_grad=True)
        self.blend_beta = Tensor(np.zeros((1, cin, 1, 1), dtype=np.float32), requires_grad=True)
        self.conv = Conv2d(cin, cout, 3, rng)

    def modulation(self, style_map: Tensor, mask_onehot: np.ndarray) -> tuple[Tensor, Tensor]:
        c = self.cin
        s = self.style_conv(style_map)
        m = self.mask_conv(Tensor(mask_onehot.astype(style_map.dtype)))
        wg = sigmoid(self.blend_gamma)
        wb = sigmoid(self.blend_beta)
        gamma = wg * getitem(s, np.s_[:, :c]) + (1 - wg) * getitem(m, np.s_[:, :c])
        beta = wb * getitem(s, np.s_[:, c:]) + (1 - wb) * getitem(m, np.s_[:, c:])
        return gamma, beta

    def __call__(self, x: Tensor, style_map: Tensor, mask_onehot: np.ndarray) -> Tensor:
        gamma, beta = self.modulation(style_map, mask_onehot)
        normed = instance_norm(x)
        h = normed + gamma * normed + beta
        return upsample2x(leaky_relu(self.conv(h), 0.2))


def sean_block(x: Tensor, style_map: Tensor, mask_onehot: np.ndarray, block: SeanBlock) -> Tensor:
    return block(x, style_map, mask_onehot)


class Decoder(Module):
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        s0 = cfg.start_resolution
        if s0 < 1:
            raise ValueError(f"image size {cfg.image_size} too small for {len(cfg.channels)} blocks")
        self.const = Tensor(rng.standard_normal((1, cfg.const_channels, s0, s0)).astype(np.float32), requires_grad=True)
        cins = [cfg.const_channels] + cfg.channels[:-1]
        self.blocks = [SeanBlock(ci, co, cfg.style_dim, cfg.num_classes, rng) for ci, co in zip(cins, cfg.channels)]
        self.to_rgb = Conv2d(cfg.channels[-1], 3, 3, rng)

    def __call__(self, style: StyleMatrix, labels: np.ndarray) -> Tensor:
        n = labels.shape[0]
        x = add(self.const, Tensor(np.zeros((n,) + self.const.shape[1:], dtype=self.const.dtype)))
        res = self.cfg.start_resolution
        for block in self.blocks:
            small = resize_labels(labels, res, res)
            style_map = broadcast_style(style, small, res, res)
            x = block(x, style_map, one_hot(small, self.cfg.num_classes))
            res *= 2
        out = tanh(self.to_rgb(x))
        return (out + 1.0) * 0.5


def generate(style: StyleMatrix, labels: np.ndarray, decoder: Decoder) -> Tensor:
    return decoder(style, labels)
