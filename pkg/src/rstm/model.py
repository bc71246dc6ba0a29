"""The full generator: encoder -> swap -> MRSA -> decoder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .decoder import Decoder, DecoderConfig
from .encoder import EncoderConfig, MultiScaleEncoder
from .layers import Module
from .mrsa import MRSA, compose_swapped, mrsa_ablation_passthrough
from .styles import StyleMatrix
from .tensor import Tensor


@dataclass
class ModelConfig:
    image_size: int = 64
    num_classes: int = 8
    style_dim: int = 64
    enc_channels: list[int] = field(default_factory=lambda: [32, 64, 128, 128])
    fuse_channels: int = 128
    dec_const_channels: int = 128
    dec_channels: list[int] = field(default_factory=lambda: [128, 128, 64, 32])
    ablate_softmax: bool = False
    ablate_sa: bool = False

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            image_size=self.image_size,
            channels=list(self.enc_channels),
            fuse_channels=self.fuse_channels,
            style_dim=self.style_dim,
            num_classes=self.num_classes,
            use_softmax=not self.ablate_softmax,
        )

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            image_size=self.image_size,
            const_channels=self.dec_const_channels,
            channels=list(self.dec_channels),
            style_dim=self.style_dim,
            num_classes=self.num_classes,
        )


def to_nchw(images: np.ndarray) -> Tensor:
    """(N, H, W, 3) or (H, W, 3) floats in [0, 1] -> NCHW tensor."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return Tensor(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def to_nhwc(images: Tensor) -> np.ndarray:
    return np.ascontiguousarray(images.data.transpose(0, 2, 3, 1))


class Generator(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.encoder = MultiScaleEncoder(cfg.encoder_config(), rng)
        if not cfg.ablate_sa:
            self.mrsa = MRSA(cfg.style_dim, rng)
        self.decoder = Decoder(cfg.decoder_config(), rng)

    def encode(self, images: Tensor, labels: np.ndarray) -> StyleMatrix:
        return self.encoder(images, labels)

    def correct(self, s_rp: StyleMatrix, s_t: StyleMatrix) -> StyleMatrix:
        if self.cfg.ablate_sa:
            return mrsa_ablation_passthrough(s_rp)
        return self.mrsa(s_rp, s_t)

    def synthesize(self, s_t: StyleMatrix, s_r: StyleMatrix, regions: Iterable[int], labels: np.ndarray) -> Tensor:
        s_rp = compose_swapped(s_t, s_r, regions)
        return self.decoder(self.correct(s_rp, s_t), labels)

    def reconstruct(self, images: Tensor, labels: np.ndarray) -> Tensor:
        """Supervised path: the reference is the input itself."""
        s_t = self.encode(images, labels)
        return self.decoder(self.correct(s_t, s_t), labels)

    def transfer(
        self,
        target: Tensor,
        target_labels: np.ndarray,
        reference: Tensor,
        reference_labels: np.ndarray,
        regions: Iterable[int],
    ) -> Tensor:
        s_t = self.encode(target, target_labels)
        s_r = self.encode(reference, reference_labels)
        return self.synthesize(s_t, s_r, regions, target_labels)
