"""Evaluation metrics: PSNR, diagonal Frechet distance, mCSD/mOCD, harmony score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .layers import Conv2d, Linear, Module
from .tensor import Adam, Tensor, concat, leaky_relu, mean, no_grad, sigmoid, softplus
from .tensor.core import ShapeError

PSNR_CAP = 99.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak-1.0 PSNR in dB; identical images give the capped value 99.0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


@dataclass
class FeatureStats:
    mu: np.ndarray
    var: np.ndarray

    @classmethod
    def from_samples(cls, x: np.ndarray) -> "FeatureStats":
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        return cls(x.mean(axis=0), x.var(axis=0))


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """Frechet distance between diagonal Gaussians:
    |mu_a - mu_b|^2 + sum(var_a + var_b - 2 sqrt(var_a var_b))."""
    if a.mu.shape != b.mu.shape:
        raise ShapeError(f"feature dims differ: {a.mu.shape} vs {b.mu.shape}")
    mean_term = float(np.sum((a.mu - b.mu) ** 2))
    sa, sb = np.sqrt(np.maximum(a.var, 0)), np.sqrt(np.maximum(b.var, 0))
    return mean_term + float(np.sum((sa - sb) ** 2))


def mcsd_mocd(samples: np.ndarray, region_mask: np.ndarray) -> tuple[float | None, float | None]:
    """Mean pairwise L1 diversity inside (mCSD) and outside (mOCD) ``region_mask``.

    ``samples`` is (N, H, W, 3) generated for one target; ``region_mask`` is
    (H, W) bool.  A side with no pixels is reported as None.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = len(samples)
    if n < 2:
        raise ValueError("mcsd_mocd needs at least two samples")
    inside = np.asarray(region_mask, dtype=bool)
    outside = ~inside
    flat = samples.reshape(n, -1, samples.shape[-1])
    ins, outs = flat[:, inside.reshape(-1)], flat[:, outside.reshape(-1)]
    csd, ocd = [], []
    for i in range(n):
        for j in range(i + 1, n):
            if ins.shape[1]:
                csd.append(np.abs(ins[i] - ins[j]).mean())
            if outs.shape[1]:
                ocd.append(np.abs(outs[i] - outs[j]).mean())
    return (float(np.mean(csd)) if csd else None, float(np.mean(ocd)) if ocd else None)


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pos, neg = labels.sum(), (~labels).sum()
    if pos == 0 or neg == 0:
        raise ValueError("AUC needs both positive and negative samples")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - pos * (pos + 1) / 2) / (pos * neg))


class HarmonyClassifier(Module):
    """RGB + foreground-mask conv net giving one real-vs-composite logit."""

    def __init__(self, rng: np.random.Generator, channels=(16, 32, 64, 64)):
        super().__init__()
        cins = [4] + list(channels[:-1])
        self.convs = [Conv2d(ci, co, 3, rng, stride=2) for ci, co in zip(cins, channels)]
        self.head = Linear(channels[-1], 1, rng)

    def features(self, images: Tensor, fg: np.ndarray) -> Tensor:
        """Penultimate 64-d features (global average pool)."""
        x = concat([images, Tensor(fg[:, None].astype(images.dtype))], axis=1)
        for conv in self.convs:
            x = leaky_relu(conv(x), 0.2)
        return mean(x, axis=(2, 3))

    def __call__(self, images: Tensor, fg: np.ndarray) -> Tensor:
        return self.head(self.features(images, fg)).reshape(-1)


def _nchw(images: np.ndarray) -> Tensor:
    return Tensor(np.ascontiguousarray(np.asarray(images, dtype=np.float32).transpose(0, 3, 1, 2)))


def harmony_logits(clf: HarmonyClassifier, images: np.ndarray, fg: np.ndarray, chunk: int = 64) -> np.ndarray:
    out = []
    clf.eval()
    with no_grad():
        for i in range(0, len(images), chunk):
            out.append(clf(_nchw(images[i : i + chunk]), fg[i : i + chunk]).data)
    return np.concatenate(out)


def harmony_score(clf: HarmonyClassifier, image: np.ndarray, fg_mask: np.ndarray) -> float | np.ndarray:
    """Sigmoid probability that the image is real; batched input gives an array."""
    single = np.asarray(image).ndim == 3
    images = np.asarray(image)[None] if single else np.asarray(image)
    fg = np.asarray(fg_mask)[None] if single else np.asarray(fg_mask)
    logits = harmony_logits(clf, images, fg.astype(bool))
    probs = sigmoid(Tensor(logits.astype(np.float64))).data
    return float(probs[0]) if single else probs


def harmony_features(clf: HarmonyClassifier, images: np.ndarray, fg: np.ndarray, chunk: int = 64) -> np.ndarray:
    out = []
    clf.eval()
    with no_grad():
        for i in range(0, len(images), chunk):
            out.append(clf.features(_nchw(images[i : i + chunk]), fg[i : i + chunk]).data)
    return np.concatenate(out)


@dataclass
class HarmonyReport:
    auc: float
    train_size: int
    heldout_size: int
    final_loss: float


def train_harmony(
    real_images: np.ndarray,
    real_fg: np.ndarray,
    composite_images: np.ndarray,
    composite_fg: np.ndarray,
    epochs: int = 20,
    seed: int = 0,
    batch: int = 32,
    lr: float = 1e-3,
    heldout_fraction: float = 0.2,
    shuffle_labels: bool = False,
) -> tuple[HarmonyClassifier, HarmonyReport]:
    """Fit real (label 1) vs composite (label 0) with logistic loss; AUC on a held-out split."""
    if len(real_images) == 0 or len(composite_images) == 0:
        raise ValueError("harmony training needs both real and composite samples")
    images = np.concatenate([real_images, composite_images]).astype(np.float32)
    fg = np.concatenate([real_fg, composite_fg]).astype(bool)
    labels = np.concatenate([np.ones(len(real_images)), np.zeros(len(composite_images))]).astype(np.float32)
    rng = np.random.default_rng([seed, 7])
    order = rng.permutation(len(images))
    n_held = max(2, int(round(heldout_fraction * len(images))))
    held, train = order[:n_held], order[n_held:]
    train_labels = labels[train].copy()
    if shuffle_labels:
        train_labels = rng.permutation(train_labels)
    clf = HarmonyClassifier(np.random.default_rng([seed, 8]))
    opt = Adam(clf.named_parameters(), lr, beta1=0.9, beta2=0.999)
    loss_val = float("nan")
    for _ in range(epochs):
        perm = rng.permutation(len(train))
        clf.train()
        for i in range(0, len(perm), batch):
            sel = train[perm[i : i + batch]]
            y = train_labels[perm[i : i + batch]]
            logits = clf(_nchw(images[sel]), fg[sel])
            # logistic loss: y * softplus(-l) + (1 - y) * softplus(l)
            sign = Tensor((1.0 - 2.0 * y).astype(np.float32))
            loss = mean(softplus(logits * sign))
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_val = float(loss.data)
    held_labels = labels[held]
    if held_labels.min() == held_labels.max():
        raise ValueError("held-out split is single-class")
    auc = roc_auc(harmony_logits(clf, images[held], fg[held]), held_labels)
    return clf, HarmonyReport(auc=auc, train_size=len(train), heldout_size=len(held), final_loss=loss_val)
