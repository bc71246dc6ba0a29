"""Regional style mapping: per-group nets from Gaussian latents to style rows,
trained against encoder styles by per-group style discriminators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Linear, Module
from .styles import StyleMatrix
from .tensor import Tensor, concat, leaky_relu, mean, softplus

DEFAULT_GROUPS: tuple[tuple[int, ...], ...] = ((0,), (1, 5), (2,), (3, 4, 7), (6,))


@dataclass
class GroupingConfig:
    groups: tuple[tuple[int, ...], ...] = DEFAULT_GROUPS

    def validate(self, num_classes: int) -> "GroupingConfig":
        seen: list[int] = [c for g in self.groups for c in g]
        if len(seen) != len(set(seen)):
            raise ValueError(f"groups overlap: {self.groups}")
        if sorted(seen) != list(range(num_classes)):
            raise ValueError(f"groups {self.groups} do not cover classes 0..{num_classes - 1} exactly once")
        return self

    def group_of(self, c: int) -> int:
        for j, g in enumerate(self.groups):
            if c in g:
                return j
        raise KeyError(c)


class MappingNet(Module):
    def __init__(self, latent_dim: int, hidden: int, rows: int, style_dim: int, rng: np.random.Generator):
        super().__init__()
        self.rows = rows
        self.style_dim = style_dim
        self.fc1 = Linear(latent_dim, hidden, rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.fc3 = Linear(hidden, rows * style_dim, rng)

    def __call__(self, z: Tensor) -> Tensor:
        h = leaky_relu(self.fc1(z), 0.2)
        h = leaky_relu(self.fc2(h), 0.2)
        return self.fc3(h).reshape(z.shape[0], self.rows, self.style_dim)


class StyleDiscriminator(Module):
    def __init__(self, din: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(din, hidden, rng, sn=True)
        self.fc2 = Linear(hidden, hidden, rng, sn=True)
        self.fc3 = Linear(hidden, 1, rng, sn=True)

    def __call__(self, styles: Tensor) -> Tensor:
        h = leaky_relu(self.fc1(styles.reshape(styles.shape[0], -1)), 0.2)
        h = leaky_relu(self.fc2(h), 0.2)
        return self.fc3(h)


class RegionalStyleMapping(Module):
    def __init__(
        self,
        style_dim: int,
        rng: np.random.Generator,
        grouping: GroupingConfig | None = None,
        num_classes: int = 8,
        latent_dim: int = 16,
        hidden: int = 64,
    ):
        super().__init__()
        self.grouping = (grouping or GroupingConfig()).validate(num_classes)
        self.style_dim = style_dim
        self.latent_dim = latent_dim
        self.num_classes = num_classes
        groups = self.grouping.groups
        self.mappers = [MappingNet(latent_dim, hidden, len(g), style_dim, rng) for g in groups]
        self.discs = [StyleDiscriminator(len(g) * style_dim, hidden, rng) for g in groups]

    @property
    def groups(self) -> tuple[tuple[int, ...], ...]:
        return self.grouping.groups

    def sample_group_styles(self, z: Tensor, j: int) -> Tensor:
        """(B, Z) latents -> (B, |group j|, D) style rows."""
        return self.mappers[j](z)

    def latents(self, rng: np.random.Generator, batch: int) -> list[Tensor]:
        return [Tensor(rng.standard_normal((batch, self.latent_dim)).astype(np.float32)) for _ in self.groups]

    def assemble(self, group_rows: list[Tensor]) -> StyleMatrix:
        """Slot every group's rows into a full (B, C, D) style matrix."""
        batch = group_rows[0].shape[0]
        order = [c for g in self.groups for c in g]
        stacked = concat(group_rows, axis=1)
        perm = np.argsort(order)
        styles = stacked[:, perm]
        return StyleMatrix(styles, np.ones((batch, self.num_classes), dtype=bool))

    def sample(self, rng: np.random.Generator, batch: int) -> StyleMatrix:
        zs = self.latents(rng, batch)
        return self.assemble([self.sample_group_styles(z, j) for j, z in enumerate(zs)])


def group_real_styles(styles: np.ndarray, valid: np.ndarray, group: tuple[int, ...]) -> np.ndarray:
    """Encoder style rows of ``group`` for samples where every group class is present."""
    keep = valid[:, list(group)].all(axis=1)
    return styles[keep][:, list(group)]


def rsm_losses(
    real_styles: list[Tensor],
    fake_styles: list[Tensor],
    discs: list[StyleDiscriminator],
) -> tuple[list[Tensor], list[Tensor]]:
    """Non-saturating style-space GAN losses per group.

    disc: -log s(D(real)) - log(1 - s(D(fake)));  gen: -log s(D(fake)).
    The disc term sees detached fakes, so it never reaches the mapping nets.
    """
    gen_losses, disc_losses = [], []
    for real, fake, disc in zip(real_styles, fake_styles, discs):
        d_real = disc(real)
        d_fake_detached = disc(fake.detach())
        disc_losses.append(mean(softplus(-d_real)) + mean(softplus(d_fake_detached)))
        gen_losses.append(mean(softplus(-disc(fake))))
    return gen_losses, disc_losses
