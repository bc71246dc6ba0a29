"""Procedural segmented face-like images.

Faces are stacks of ellipses (hair behind skin, features on top) filled
with per-region colors; hair carries a sinusoidal stripe texture.  A
global brightness multiplier models lighting: "studio" faces sit near 1.0,
"wild" faces range over [0.4, 1.3].
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import CLASS_NAMES, NUM_CLASSES
from .prng import XorShift64Star, derive_seed

BACKGROUND, SKIN, HAIR, LEFT_EYE, RIGHT_EYE, NOSE, MOUTH, BROWS = range(8)

# Paint order: later entries cover earlier ones.
PAINT_ORDER = ("hair", "skin", "nose", "brows_l", "brows_r", "left_eye", "right_eye", "mouth")
_LABEL_OF = {
    "hair": HAIR,
    "skin": SKIN,
    "nose": NOSE,
    "brows_l": BROWS,
    "brows_r": BROWS,
    "left_eye": LEFT_EYE,
    "right_eye": RIGHT_EYE,
    "mouth": MOUTH,
}

_HAIR_PALETTE = (
    (0.10, 0.08, 0.07),
    (0.38, 0.24, 0.14),
    (0.72, 0.60, 0.36),
    (0.58, 0.24, 0.10),
    (0.55, 0.55, 0.56),
)
_SKIN_LIGHT = (0.76, 0.64, 0.56)
_SKIN_DARK = (0.46, 0.32, 0.24)

STUDIO_BRIGHTNESS = (0.95, 1.05)
WILD_BRIGHTNESS = (0.4, 1.3)


class DatasetError(ValueError):
    """A dataset file is missing or cannot be parsed."""


@dataclass
class FaceSpec:
    """Everything needed to render one face; ``render`` is a pure function of it.

    Ellipses are (center_y, center_x, radius_y, radius_x) in pixels.
    """

    seed: int
    split: str
    size: int
    brightness: float
    colors: dict[str, tuple[float, float, float]]
    ellipses: dict[str, tuple[float, float, float, float]]
    hair_freq: float
    hair_angle: float
    hair_phase: float
    hair_amp: float
    extra: dict = field(default_factory=dict)


def _jitter(rng: XorShift64Star, color, amount: float):
    return tuple(min(0.76, max(0.02, c + rng.uniform(-amount, amount))) for c in color)


def sample_face(seed: int, split: str = "studio", size: int = 64) -> FaceSpec:
    if split not in ("studio", "wild"):
        raise ValueError(f"split must be 'studio' or 'wild', got {split!r}")
    rng = XorShift64Star(derive_seed(seed, 0 if split == "studio" else 1))
    s = size / 64.0

    cy = rng.uniform(34.0, 37.0) * s
    cx = rng.uniform(30.0, 34.0) * s
    fry = rng.uniform(19.0, 22.0) * s
    frx = rng.uniform(15.5, 18.5) * s
    hry = fry * 0.8 + rng.uniform(3.0, 6.0) * s
    hrx = frx + rng.uniform(2.5, 5.0) * s
    hcy = max(cy - fry * 0.3 - rng.uniform(1.0, 4.0) * s, hry + 1.0 * s)

    eye_dy = fry * rng.uniform(0.14, 0.24)
    eye_dx = frx * rng.uniform(0.38, 0.46)
    eye_ry = rng.uniform(2.9, 3.3) * s
    eye_rx = rng.uniform(3.6, 4.4) * s
    eye_y = cy - eye_dy
    brow_ry = rng.uniform(2.9, 3.1) * s
    brow_rx = rng.uniform(4.5, 5.5) * s
    brow_y = eye_y - eye_ry - brow_ry - rng.uniform(0.6, 1.2) * s
    nose_y = cy + fry * rng.uniform(0.10, 0.18)
    mouth_y = cy + fry * rng.uniform(0.50, 0.58)

    ellipses = {
        "hair": (hcy, cx, hry, hrx),
        "skin": (cy, cx, fry, frx),
        "nose": (nose_y, cx, rng.uniform(4.0, 5.0) * s, rng.uniform(2.9, 3.4) * s),
        "brows_l": (brow_y, cx - eye_dx, brow_ry, brow_rx),
        "brows_r": (brow_y, cx + eye_dx, brow_ry, brow_rx),
        "left_eye": (eye_y, cx - eye_dx, eye_ry, eye_rx),
        "right_eye": (eye_y, cx + eye_dx, eye_ry, eye_rx),
        "mouth": (mouth_y, cx, rng.uniform(2.9, 3.3) * s, rng.uniform(5.5, 7.5) * s),
    }

    tone = rng.random()
    skin = tuple(a + (b - a) * tone for a, b in zip(_SKIN_LIGHT, _SKIN_DARK))
    skin = _jitter(rng, skin, 0.03)
    shade = rng.uniform(0.88, 0.95)
    hair = _jitter(rng, rng.choice(_HAIR_PALETTE), 0.05)
    iris_hue = rng.random()
    colors = {
        "background": tuple(rng.uniform(0.15, 0.75) for _ in range(3)),
        "skin": skin,
        "nose": tuple(c * shade for c in skin),
        "hair": hair,
        "brows": tuple(c * 0.8 for c in hair),
        "eyes": (0.10 + 0.15 * iris_hue, 0.12 + 0.12 * (1 - iris_hue), 0.15 + 0.25 * iris_hue),
        "mouth": _jitter(rng, (0.70, 0.32, 0.33), 0.05),
    }

    lo, hi = STUDIO_BRIGHTNESS if split == "studio" else WILD_BRIGHTNESS
    brightness = rng.uniform(lo, hi)
    return FaceSpec(
        seed=int(seed),
        split=split,
        size=size,
        brightness=brightness,
        colors=colors,
        ellipses=ellipses,
        hair_freq=rng.uniform(2.0, 10.0),
        hair_angle=rng.uniform(0.0, math.pi),
        hair_phase=rng.uniform(0.0, 2 * math.pi),
        hair_amp=rng.uniform(0.10, 0.22),
    )


def _ellipse_mask(size: int, ellipse) -> np.ndarray:
    cy, cx, ry, rx = ellipse
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def render_base(spec: FaceSpec) -> tuple[np.ndarray, np.ndarray]:
    """Unclamped float64 image at brightness 1, and the label map."""
    n = spec.size
    labels = np.zeros((n, n), dtype=np.uint8)
    for part in PAINT_ORDER:
        labels[_ellipse_mask(n, spec.ellipses[part])] = _LABEL_OF[part]

    palette = np.zeros((NUM_CLASSES, 3))
    palette[BACKGROUND] = spec.colors["background"]
    palette[SKIN] = spec.colors["skin"]
    palette[HAIR] = spec.colors["hair"]
    palette[LEFT_EYE] = spec.colors["eyes"]
    palette[RIGHT_EYE] = spec.colors["eyes"]
    palette[NOSE] = spec.colors["nose"]
    palette[MOUTH] = spec.colors["mouth"]
    palette[BROWS] = spec.colors["brows"]
    base = palette[labels]

    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    proj = (xx * math.cos(spec.hair_angle) + yy * math.sin(spec.hair_angle)) / n
    stripes = 1.0 + spec.hair_amp * np.sin(2 * math.pi * spec.hair_freq * proj + spec.hair_phase)
    hair = labels == HAIR
    base[hair] *= stripes[hair][:, None]
    return base, labels


def render(spec: FaceSpec) -> tuple[np.ndarray, np.ndarray]:
    """(H, W, 3) float32 image in [0, 1] and (H, W) uint8 labels."""
    base, labels = render_base(spec)
    image = np.clip(base * spec.brightness, 0.0, 1.0).astype(np.float32)
    return image, labels


def face_seed(dataset_seed: int, index: int) -> int:
    return derive_seed(dataset_seed, index) & 0x7FFFFFFF


def region_centroid(labels: np.ndarray, c: int) -> tuple[float, float] | None:
    ys, xs = np.nonzero(labels == c)
    if ys.size == 0:
        return None
    return float(ys.mean()), float(xs.mean())


def naive_composite(
    target_image: np.ndarray,
    target_labels: np.ndarray,
    reference_image: np.ndarray,
    reference_labels: np.ndarray,
    region_set,
    warnings: list[str] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Copy reference pixels of ``region_set`` onto the target, no blending.

    Each region is shifted so its mean position lands on the target's.
    Returns the composite and the boolean mask of replaced pixels.
    """
    if target_image.shape != reference_image.shape or target_labels.shape != reference_labels.shape:
        raise ValueError("target and reference must have the same dimensions")
    out = target_image.copy()
    fg = np.zeros(target_labels.shape, dtype=bool)
    h, w = target_labels.shape
    for c in sorted(set(int(r) for r in region_set)):
        ref_pos = region_centroid(reference_labels, c)
        if ref_pos is None:
            if warnings is not None:
                warnings.append(f"region '{CLASS_NAMES[c]}' absent from reference; skipped")
            continue
        tgt_pos = region_centroid(target_labels, c)
        dy, dx = (0, 0) if tgt_pos is None else (round(tgt_pos[0] - ref_pos[0]), round(tgt_pos[1] - ref_pos[1]))
        ys, xs = np.nonzero(reference_labels == c)
        ty, tx = ys + dy, xs + dx
        keep = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
        out[ty[keep], tx[keep]] = reference_image[ys[keep], xs[keep]]
        fg[ty[keep], tx[keep]] = True
    return out, fg


# -- dataset files ----------------------------------------------------------
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def validate_png(path: Path, blob: bytes) -> None:
    """Walk the chunk structure, raising DatasetError with the byte offset of the first fault."""
    if not blob.startswith(PNG_SIGNATURE):
        raise DatasetError(f"{path}: bad PNG signature at byte offset 0")
    off = len(PNG_SIGNATURE)
    first = True
    while True:
        if off + 8 > len(blob):
            raise DatasetError(f"{path}: truncated chunk header at byte offset {off}")
        length, ctype = struct.unpack(">I4s", blob[off : off + 8])
        end = off + 8 + length + 4
        if end > len(blob):
            raise DatasetError(f"{path}: truncated {ctype!r} chunk at byte offset {off}")
        if first and ctype != b"IHDR":
            raise DatasetError(f"{path}: first chunk is {ctype!r}, not IHDR, at byte offset {off}")
        first = False
        body = blob[off + 4 : off + 8 + length]
        (crc,) = struct.unpack(">I", blob[off + 8 + length : end])
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise DatasetError(f"{path}: CRC mismatch in {ctype!r} chunk at byte offset {off}")
        if ctype == b"IEND":
            return
        off = end


def save_png(path, array: np.ndarray) -> None:
    """Write (H, W, 3) floats in [0, 1] as RGB8 or (H, W) integers as L8."""
    arr = np.asarray(array)
    if arr.ndim == 3:
        data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
        PILImage.fromarray(data, mode="RGB").save(path, format="PNG", optimize=False, compress_level=6)
    else:
        PILImage.fromarray(arr.astype(np.uint8), mode="L").save(path, format="PNG", optimize=False, compress_level=6)


def load_png(path, mode: str) -> np.ndarray:
    """Read a PNG as float RGB in [0, 1] (``mode='RGB'``) or uint8 labels (``mode='L'``)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read file ({exc.strerror})") from exc
    validate_png(path, blob)
    try:
        import io

        with PILImage.open(io.BytesIO(blob)) as im:
            im.load()
            arr = np.asarray(im.convert(mode))
    except Exception as exc:  # noqa: BLE001 - PIL raises many types on bad data
        raise DatasetError(f"{path}: undecodable image data after byte offset 8 ({exc})") from exc
    if mode == "RGB":
        return (arr.astype(np.float32) / 255.0)
    return arr.astype(np.uint8)


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, 3) float32
    labels: np.ndarray  # (N, H, W) uint8
    meta: dict

    def __len__(self) -> int:
        return len(self.images)

    @property
    def class_names(self) -> list[str]:
        return list(self.meta.get("classes", CLASS_NAMES))

    @property
    def brightness(self) -> np.ndarray | None:
        """Per-image lighting multiplier when the generator recorded it."""
        b = self.meta.get("brightness")
        return None if b is None else np.asarray(b, dtype=np.float64)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        meta = dict(self.meta, count=int(index.size))
        if "brightness" in meta:
            meta["brightness"] = [self.meta["brightness"][i] for i in index.tolist()]
        return Dataset(self.images[index], self.labels[index], meta)


def _meta(count: int, seed: int, split: str, size: int, brightness: list[float]) -> dict:
    return {
        "count": count,
        "seed": seed,
        "split": split,
        "image_size": size,
        "classes": list(CLASS_NAMES),
        "brightness": brightness,
    }


def generate(count: int, seed: int, split: str, size: int = 64) -> Dataset:
    images, labels, brightness = [], [], []
    for i in range(count):
        spec = sample_face(face_seed(seed, i), split, size)
        img, lab = render(spec)
        images.append(img)
        labels.append(lab)
        brightness.append(spec.brightness)
    return Dataset(np.stack(images), np.stack(labels), _meta(count, seed, split, size, brightness))


def write_dataset(directory, count: int, seed: int, split: str, size: int = 64) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    brightness = []
    for i in range(count):
        spec = sample_face(face_seed(seed, i), split, size)
        img, lab = render(spec)
        save_png(directory / f"{i:06d}_img.png", img)
        save_png(directory / f"{i:06d}_mask.png", lab)
        brightness.append(spec.brightness)
    meta = _meta(count, seed, split, size, brightness)
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return directory


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    try:
        meta = json.loads(meta_path.read_text())
    except OSError as exc:
        raise DatasetError(f"{meta_path}: cannot read file ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{meta_path}: invalid JSON at byte offset {exc.pos}") from exc
    images, labels = [], []
    for i in range(int(meta["count"])):
        images.append(load_png(directory / f"{i:06d}_img.png", "RGB"))
        lab = load_png(directory / f"{i:06d}_mask.png", "L")
        if lab.max(initial=0) >= len(meta.get("classes", CLASS_NAMES)):
            raise DatasetError(f"{directory / f'{i:06d}_mask.png'}: label {lab.max()} out of range")
        labels.append(lab)
    return Dataset(np.stack(images), np.stack(labels), meta)


def concat_datasets(parts: list[Dataset]) -> Dataset:
    meta = dict(parts[0].meta)
    meta["count"] = sum(len(p) for p in parts)
    meta["split"] = "+".join(str(p.meta.get("split")) for p in parts)
    if all("brightness" in p.meta for p in parts):
        meta["brightness"] = [b for p in parts for b in p.meta["brightness"]]
    else:
        meta.pop("brightness", None)
    return Dataset(
        np.concatenate([p.images for p in parts]),
        np.concatenate([p.labels for p in parts]),
        meta,
    )
