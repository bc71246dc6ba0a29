"""Experiment drivers behind ``rstm eval`` and the acceptance suite."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .harmony import MIN_LIGHTING_RATIO, cross_lighting_pairs, own_region_masks
from .metrics import (
    FeatureStats,
    HarmonyClassifier,
    frechet_distance,
    harmony_features,
    harmony_score,
    mcsd_mocd,
    psnr,
)
from .model import Generator, to_nchw, to_nhwc
from .rsm import RegionalStyleMapping
from .tensor import no_grad
from .toyfaces import HAIR, Dataset, naive_composite


def reconstruct_images(G: Generator, images: np.ndarray, labels: np.ndarray, chunk: int = 25) -> np.ndarray:
    G.eval()
    out = []
    with no_grad():
        for i in range(0, len(images), chunk):
            out.append(to_nhwc(G.reconstruct(to_nchw(images[i : i + chunk]), labels[i : i + chunk])))
    return np.concatenate(out)


def transfer_images(
    G: Generator,
    target_images: np.ndarray,
    target_labels: np.ndarray,
    ref_images: np.ndarray,
    ref_labels: np.ndarray,
    regions,
    chunk: int = 25,
) -> np.ndarray:
    G.eval()
    out = []
    with no_grad():
        for i in range(0, len(target_images), chunk):
            sl = slice(i, i + chunk)
            y = G.transfer(to_nchw(target_images[sl]), target_labels[sl], to_nchw(ref_images[sl]), ref_labels[sl], regions)
            out.append(to_nhwc(y))
    return np.concatenate(out)


def sample_region_styles(
    G: Generator,
    rsm: RegionalStyleMapping,
    image: np.ndarray,
    labels: np.ndarray,
    regions,
    num: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """``num`` outputs for one target with ``regions`` restyled by random RSM codes."""
    G.eval()
    rsm.eval()
    with no_grad():
        imgs = np.repeat(image[None], num, axis=0)
        labs = np.repeat(labels[None], num, axis=0)
        s_t = G.encode(to_nchw(imgs), labs)
        s_r = rsm.sample(rng, num)
        return to_nhwc(G.synthesize(s_t, s_r, regions, labs))


@dataclass
class TransferStudy:
    """Cross-lighting single-region transfers and their naive counterparts."""

    pairs: np.ndarray
    model_images: np.ndarray
    model_fg: np.ndarray
    naive_images: np.ndarray
    naive_fg: np.ndarray


def transfer_study(
    G: Generator,
    dataset: Dataset,
    n_pairs: int = 100,
    seed: int = 0,
    region: int = HAIR,
    min_ratio: float = MIN_LIGHTING_RATIO,
) -> TransferStudy:
    b = dataset.brightness
    if b is None:
        raise ValueError("dataset meta.json has no per-image brightness; regenerate it with gen-data")
    rng = np.random.default_rng([seed, 21])
    pairs = cross_lighting_pairs(b, n_pairs, rng, min_ratio)
    t, r = pairs[:, 0], pairs[:, 1]
    model = transfer_images(G, dataset.images[t], dataset.labels[t], dataset.images[r], dataset.labels[r], [region])
    naive, naive_fg = [], []
    for ti, ri in pairs:
        img, fg = naive_composite(dataset.images[ti], dataset.labels[ti], dataset.images[ri], dataset.labels[ri], [region])
        naive.append(img)
        naive_fg.append(fg)
    return TransferStudy(pairs, model, dataset.labels[t] == region, np.stack(naive), np.stack(naive_fg))


def diversity_study(
    G: Generator,
    rsm: RegionalStyleMapping,
    dataset: Dataset,
    n_targets: int = 50,
    n_samples: int = 10,
    region: int = HAIR,
    seed: int = 0,
) -> tuple[float | None, float | None]:
    """Mean mCSD and mOCD over targets, each restyled ``n_samples`` times."""
    rng = np.random.default_rng([seed, 31])
    targets = rng.choice(len(dataset), size=min(n_targets, len(dataset)), replace=False)
    csd, ocd = [], []
    for i in targets:
        samples = sample_region_styles(G, rsm, dataset.images[i], dataset.labels[i], [region], n_samples, rng)
        c, o = mcsd_mocd(samples, dataset.labels[i] == region)
        if c is not None:
            csd.append(c)
        if o is not None:
            ocd.append(o)
    return (float(np.mean(csd)) if csd else None, float(np.mean(ocd)) if ocd else None)


@dataclass
class EvalReport:
    psnr_mean: float
    frechet: float
    hs_mean: float
    mcsd: float | None
    mocd: float | None
    config_echo: dict
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(
    G: Generator,
    clf: HarmonyClassifier,
    dataset: Dataset,
    rsm: RegionalStyleMapping | None = None,
    seed: int = 0,
    n_pairs: int = 100,
    n_targets: int = 50,
    n_samples: int = 10,
    config_echo: dict | None = None,
) -> tuple[EvalReport, dict]:
    """Report plus the arrays behind it (for figures).

    psnr_mean: reconstruction PSNR over ``dataset``.
    hs_mean: harmony score of cross-lighting hair transfers.
    frechet: diagonal Frechet distance between harmony-net features of the
    real images and of those transfers.
    mcsd / mocd: hair diversity under RSM sampling; null without RSM weights.
    """
    recon = reconstruct_images(G, dataset.images, dataset.labels)
    psnrs = np.array([psnr(a, b) for a, b in zip(recon, dataset.images)])
    study = transfer_study(G, dataset, n_pairs, seed)
    hs = harmony_score(clf, study.model_images, study.model_fg)
    hs_naive = harmony_score(clf, study.naive_images, study.naive_fg)
    real_fg = own_region_masks(dataset.labels, np.random.default_rng([seed, 41]))
    real_feats = harmony_features(clf, dataset.images, real_fg)
    fake_feats = harmony_features(clf, study.model_images, study.model_fg)
    fd = frechet_distance(FeatureStats.from_samples(real_feats), FeatureStats.from_samples(fake_feats))
    mcsd = mocd = None
    if rsm is not None:
        mcsd, mocd = diversity_study(G, rsm, dataset, n_targets, n_samples, HAIR, seed)
    report = EvalReport(
        psnr_mean=float(psnrs.mean()),
        frechet=float(fd),
        hs_mean=float(np.mean(hs)),
        mcsd=mcsd,
        mocd=mocd,
        config_echo=dict(config_echo or {}),
        seed=int(seed),
    )
    extras = {
        "recon": recon,
        "psnr": psnrs,
        "study": study,
        "hs_model": hs,
        "hs_naive": hs_naive,
    }
    return report, extras
