"""Toy harmony-score data: real faces versus cross-lighting copy-paste composites."""

from __future__ import annotations

import numpy as np

from .toyfaces import BROWS, HAIR, SKIN, Dataset, naive_composite

# Region sets used both for composite foregrounds and for the random
# own-region masks given to real samples.  Each set has a partner region
# whose color is tied to it (brows = 0.8 hair, nose = shaded skin), so a
# lighting mismatch is visible locally.  Hair is listed twice.
REGION_SETS: tuple[tuple[int, ...], ...] = ((HAIR,), (HAIR,), (SKIN,), (BROWS,))
MIN_LIGHTING_RATIO = 1.25


def _require_brightness(dataset: Dataset) -> np.ndarray:
    b = dataset.brightness
    if b is None:
        raise ValueError("dataset meta.json has no per-image brightness; regenerate it with gen-data")
    return b


def cross_lighting_pairs(
    brightness: np.ndarray,
    n: int,
    rng: np.random.Generator,
    min_ratio: float = MIN_LIGHTING_RATIO,
    max_tries: int = 1000,
) -> np.ndarray:
    """``n`` (target, reference) index pairs whose lighting differs by at least ``min_ratio``."""
    brightness = np.asarray(brightness, dtype=np.float64)
    pairs = []
    for _ in range(n):
        for _ in range(max_tries):
            t, r = rng.integers(0, len(brightness), size=2)
            ratio = brightness[t] / brightness[r]
            if t != r and max(ratio, 1.0 / ratio) >= min_ratio:
                pairs.append((int(t), int(r)))
                break
        else:
            raise ValueError(f"no image pair with lighting ratio >= {min_ratio}; mix studio and wild faces")
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def own_region_masks(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """A random region-set mask per image, taken from the image's own labels."""
    out = np.zeros(labels.shape, dtype=bool)
    for i, lab in enumerate(labels):
        regions = REGION_SETS[rng.integers(len(REGION_SETS))]
        out[i] = np.isin(lab, regions)
    return out


def build_harmony_set(
    dataset: Dataset,
    n_composites: int | None = None,
    seed: int = 0,
    min_ratio: float = MIN_LIGHTING_RATIO,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(real_images, real_fg, composite_images, composite_fg).

    Every image of ``dataset`` is a positive.  Negatives paste a random
    region set from a differently lit face onto a target.
    """
    brightness = _require_brightness(dataset)
    rng = np.random.default_rng([seed, 11])
    n_composites = len(dataset) if n_composites is None else n_composites
    real_fg = own_region_masks(dataset.labels, rng)
    pairs = cross_lighting_pairs(brightness, n_composites, rng, min_ratio)
    comps, comp_fg = [], []
    for t, r in pairs:
        regions = REGION_SETS[rng.integers(len(REGION_SETS))]
        img, fg = naive_composite(dataset.images[t], dataset.labels[t], dataset.images[r], dataset.labels[r], regions)
        comps.append(img)
        comp_fg.append(fg)
    return dataset.images, real_fg, np.stack(comps), np.stack(comp_fg)
