import dataclasses
import hashlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rstm import CLASS_NAMES
from rstm.prng import XorShift64Star, splitmix64
from rstm.toyfaces import (
    HAIR,
    SKIN,
    DatasetError,
    generate,
    naive_composite,
    read_dataset,
    render,
    render_base,
    sample_face,
    write_dataset,
)


# -- prng ----------------------------------------------------------------------

def xorshift_numpy(seed, n):
    """Independent uint64 implementation of the same stream."""
    with np.errstate(over="ignore"):
        z = np.uint64(seed) + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        x = z ^ (z >> np.uint64(31))
        out = []
        for _ in range(n):
            x ^= x >> np.uint64(12)
            x ^= x << np.uint64(25)
            x ^= x >> np.uint64(27)
            out.append(int(x * np.uint64(0x2545F4914F6CDD1D)))
    return out


def test_splitmix_reference_value():
    # first output of splitmix64 started from state 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


@pytest.mark.parametrize("seed", [1, 7, 2**40 + 3])
def test_xorshift_matches_numpy_oracle(seed):
    r = XorShift64Star(seed)
    assert [r.next_u64() for _ in range(20)] == xorshift_numpy(seed, 20)


def test_xorshift_floats_in_unit_interval():
    r = XorShift64Star(3)
    vals = np.array([r.random() for _ in range(5000)])
    assert vals.min() >= 0.0 and vals.max() < 1.0
    assert abs(vals.mean() - 0.5) < 0.02


# -- sample_face / render ------------------------------------------------------

def test_sample_face_deterministic():
    assert sample_face(42, "wild") == sample_face(42, "wild")
    assert sample_face(42, "wild") != sample_face(43, "wild")


def test_studio_brightness_range():
    b = [sample_face(s, "studio").brightness for s in range(1000)]
    assert min(b) >= 0.95 and max(b) <= 1.05


def test_wild_brightness_coverage():
    b = [sample_face(s, "wild").brightness for s in range(1000)]
    assert min(b) < 0.5 and max(b) > 1.2
    assert min(b) >= 0.4 and max(b) <= 1.3


def test_sample_face_rejects_split():
    with pytest.raises(ValueError):
        sample_face(0, "outdoor")


def test_all_labels_present():
    hits = sum(len(np.unique(render(sample_face(s, "wild"))[1])) == 8 for s in range(1000))
    assert hits >= 990


def test_brightness_scaling_definition():
    spec = sample_face(5, "studio")
    bright, _ = render(dataclasses.replace(spec, brightness=1.0))
    half, _ = render(dataclasses.replace(spec, brightness=0.5))
    base, _ = render_base(spec)
    ok = np.all(base < 1.0, axis=-1)
    np.testing.assert_allclose(half[ok], np.clip(0.5 * bright[ok], 0, 1), atol=1e-6)


def test_skin_region_constant_fill():
    spec = sample_face(9, "wild")
    img, lab = render(spec)
    want = np.clip(np.array(spec.colors["skin"]) * spec.brightness, 0, 1)
    np.testing.assert_allclose(img[lab == SKIN].astype(np.float64).mean(axis=0), want, atol=1e-6)


def test_facial_parts_inside_skin():
    for s in range(50):
        spec = sample_face(s, "wild")
        for part in ("left_eye", "right_eye", "nose", "mouth", "brows_l", "brows_r"):
            cy, cx, ry, rx = spec.ellipses[part]
            fy, fx, fry, frx = spec.ellipses["skin"]
            # extreme points of the part ellipse must fall inside the skin ellipse
            for y, x in ((cy - ry, cx), (cy + ry, cx), (cy, cx - rx), (cy, cx + rx)):
                assert ((y - fy) / fry) ** 2 + ((x - fx) / frx) ** 2 <= 1.0


@given(st.integers(0, 2**31 - 1), st.sampled_from(["studio", "wild"]))
def test_render_invariants(seed, split):
    img, lab = render(sample_face(seed, split))
    assert img.shape == (64, 64, 3) and lab.shape == (64, 64)
    assert img.dtype == np.float32
    assert img.min() >= 0.0 and img.max() <= 1.0
    assert lab.max() < len(CLASS_NAMES)


# -- naive composites ----------------------------------------------------------

def _pair(a, b, sa="studio", sb="wild"):
    return render(sample_face(a, sa)) + render(sample_face(b, sb))


def test_composite_empty_set():
    ti, tl, ri, rl = _pair(1, 2)
    out, fg = naive_composite(ti, tl, ri, rl, [])
    np.testing.assert_array_equal(out, ti)
    assert not fg.any()


def test_self_composite():
    ti, tl, _, _ = _pair(3, 3)
    out, fg = naive_composite(ti, tl, ti, tl, [SKIN])
    np.testing.assert_array_equal(out, ti)
    np.testing.assert_array_equal(fg, tl == SKIN)


def test_composite_absent_region_warns():
    ti, tl, ri, rl = _pair(1, 2)
    rl = np.where(rl == HAIR, 0, rl).astype(np.uint8)
    warnings = []
    out, fg = naive_composite(ti, tl, ri, rl, [HAIR], warnings)
    assert len(warnings) == 1 and "hair" in warnings[0]
    np.testing.assert_array_equal(out, ti)


def test_composite_lighting_ratio():
    spec = sample_face(17, "studio")
    lit, lab = render(dataclasses.replace(spec, brightness=1.0))
    dark, _ = render(dataclasses.replace(spec, brightness=0.5))
    out, fg = naive_composite(dark, lab, lit, lab, [HAIR])
    ratio = out[fg].mean() / dark[fg].mean()
    assert abs(ratio / 2.0 - 1.0) < 0.10


@given(st.integers(0, 10_000), st.integers(0, 10_000), st.sets(st.integers(0, 7), max_size=4))
def test_composite_touches_only_fg(a, b, regions):
    ti, tl, ri, rl = _pair(a, b)
    out, fg = naive_composite(ti, tl, ri, rl, regions)
    np.testing.assert_array_equal(out[~fg], ti[~fg])


# -- files ---------------------------------------------------------------------

def test_roundtrip(tmp_path):
    write_dataset(tmp_path, 10, seed=3, split="wild")
    ds = read_dataset(tmp_path)
    ref = generate(10, seed=3, split="wild")
    np.testing.assert_array_equal(ds.labels, ref.labels)
    np.testing.assert_array_equal(ds.images, np.round(ref.images * 255) / np.float32(255))
    assert ds.meta["count"] == 10 and ds.meta["split"] == "wild"
    assert ds.class_names == list(CLASS_NAMES)
    np.testing.assert_allclose(ds.brightness, ref.brightness)
    write_dataset(tmp_path / "again", 10, seed=3, split="wild")
    np.testing.assert_array_equal(read_dataset(tmp_path / "again").images, ds.images)


def test_truncated_png(tmp_path):
    write_dataset(tmp_path, 2, seed=1, split="studio")
    path = tmp_path / "000001_img.png"
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(DatasetError, match=r"000001_img\.png.*byte offset \d+"):
        read_dataset(tmp_path)


def test_corrupt_png_crc(tmp_path):
    write_dataset(tmp_path, 1, seed=1, split="studio")
    path = tmp_path / "000000_mask.png"
    blob = bytearray(path.read_bytes())
    blob[40] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(DatasetError, match="byte offset"):
        read_dataset(tmp_path)


def test_bad_meta(tmp_path):
    (tmp_path / "meta.json").write_text("{ nope")
    with pytest.raises(DatasetError, match="byte offset 2"):
        read_dataset(tmp_path)


def _digest(directory):
    h = hashlib.sha256()
    for p in sorted(directory.iterdir()):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def test_large_dataset_byte_identical(tmp_path):
    write_dataset(tmp_path / "a", 2000, seed=7, split="wild")
    write_dataset(tmp_path / "b", 2000, seed=7, split="wild")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
