import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rstm.encoder import EncoderConfig, MultiScaleEncoder
from rstm.layers import Linear
from rstm.styles import broadcast_style, region_avg_pool
from rstm.tensor import Adam, Tensor, mean, no_grad


def small_encoder(seed=0, **kw):
    cfg = EncoderConfig(image_size=32, channels=[4, 6, 8], fuse_channels=5, style_dim=7, **kw)
    return MultiScaleEncoder(cfg, np.random.default_rng(seed))


def pool_loops(feat, labels, c):
    """Per-pixel accumulation of region means in float64."""
    n, ch, h, w = feat.shape
    ys = (np.arange(h) * labels.shape[1]) // h
    xs = (np.arange(w) * labels.shape[2]) // w
    out = np.zeros((n, c, ch))
    valid = np.zeros((n, c), bool)
    for a in range(n):
        count = np.zeros(c)
        for i in range(h):
            for j in range(w):
                k = labels[a, ys[i], xs[j]]
                out[a, k] += feat[a, :, i, j]
                count[k] += 1
        for k in range(c):
            if count[k]:
                out[a, k] /= count[k]
                valid[a, k] = True
    return out, valid


# -- pyramid -------------------------------------------------------------------

def test_default_pyramid_shapes():
    enc = MultiScaleEncoder(EncoderConfig(), np.random.default_rng(0))
    with no_grad():
        feats = enc.pyramid(Tensor(np.zeros((1, 3, 64, 64), np.float32)))
    assert [f.shape for f in feats] == [(1, 32, 32, 32), (1, 64, 16, 16), (1, 128, 8, 8), (1, 128, 4, 4)]
    assert all(np.all(np.isfinite(f.data)) for f in feats)
    assert enc.cfg.unified_resolution == 16


def test_pyramid_sensitive_to_one_pixel():
    enc = small_encoder()
    rng = np.random.default_rng(1)
    a = rng.random((1, 3, 32, 32)).astype(np.float32)
    b = a.copy()
    b[0, :, 10, 17] += 0.3
    with no_grad():
        fa = enc.fuse(enc.pyramid(Tensor(a)))
        fb = enc.fuse(enc.pyramid(Tensor(b)))
    assert np.abs(fa.data - fb.data).max() > 1e-4


def test_encoder_convs_spectrally_normalized():
    enc = small_encoder()
    enc.train()
    for _ in range(60):
        ws = [c.effective_weight() for c in enc.convs]
    for w in ws:
        sv = np.linalg.svd(w.data.reshape(w.shape[0], -1), compute_uv=False)[0]
        assert abs(sv - 1.0) < 1e-3


# -- fusion --------------------------------------------------------------------

def _proj_oracle(conv, x):
    w = conv.effective_weight().data[:, :, 0, 0].astype(np.float64)
    return np.einsum("oc,nchw->nohw", w, x) + conv.bias.data[None, :, None, None]


def test_fusion_closed_form_two_scales():
    cfg = EncoderConfig(image_size=64, channels=[3, 5], fuse_channels=4)
    enc = MultiScaleEncoder(cfg, np.random.default_rng(3)).eval()
    enc.fusion_raw.data = np.array([0.0, np.log(2.0)], np.float32)
    np.testing.assert_allclose(enc.fusion_weights().data[0], [1 / 3, 2 / 3], atol=1e-7)
    rng = np.random.default_rng(4)
    # features already at the unified resolution, so resizing is the identity
    f0 = rng.standard_normal((2, 3, 16, 16))
    f1 = rng.standard_normal((2, 5, 16, 16))
    got = enc.fuse([Tensor(f0.astype(np.float32)), Tensor(f1.astype(np.float32))]).data
    want = _proj_oracle(enc.proj[0], f0) / 3 + 2 * _proj_oracle(enc.proj[1], f1) / 3
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_fusion_single_scale_is_projection():
    cfg = EncoderConfig(image_size=64, channels=[4], fuse_channels=3)
    enc = MultiScaleEncoder(cfg, np.random.default_rng(2)).eval()
    f = np.random.default_rng(5).standard_normal((1, 4, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(enc.fuse([Tensor(f)]).data, enc.proj[0](Tensor(f)).data)


def test_fusion_equal_weights_average():
    enc = small_encoder().eval()
    np.testing.assert_allclose(enc.fusion_weights().data, 1 / 3, atol=1e-7)


def test_fusion_weights_stay_normalized_under_adam():
    enc = small_encoder()
    opt = Adam({"a": enc.fusion_raw}, lr=0.5)
    x = Tensor(np.random.default_rng(0).random((1, 3, 32, 32)).astype(np.float32))
    for _ in range(10):
        opt.zero_grad()
        loss = mean(enc.fuse(enc.pyramid(x)))
        loss.backward()
        opt.step()
        alpha = enc.fusion_weights().data
        assert abs(alpha.sum() - 1.0) < 1e-6 and np.all(alpha > 0)
    assert abs(enc.fusion_raw.data[0] - enc.fusion_raw.data[1]) > 1e-3


def test_no_softmax_flag_only_changes_fusion():
    a = small_encoder(use_softmax=True)
    b = small_encoder(use_softmax=False)
    assert a.num_parameters() == b.num_parameters()
    assert list(a.named_parameters()) == list(b.named_parameters())
    np.testing.assert_allclose(b.fusion_weights().data, 1 / 3)
    b.fusion_raw.data = np.array([2.0, -1.0, 0.5], np.float32)
    np.testing.assert_array_equal(b.fusion_weights().data[0], [2.0, -1.0, 0.5])


# -- region pooling ------------------------------------------------------------

def test_pool_constant_field():
    lin = Linear(3, 4, np.random.default_rng(0))
    v = np.array([0.5, -1.0, 2.0], np.float32)
    feat = np.broadcast_to(v[None, :, None, None], (1, 3, 8, 8)).copy()
    labels = np.random.default_rng(1).integers(0, 8, (1, 32, 32)).astype(np.uint8)
    sm = region_avg_pool(Tensor(feat), labels, 8, lin)
    want = lin(Tensor(v[None])).data[0]
    for c in np.flatnonzero(sm.valid[0]):
        np.testing.assert_allclose(sm.styles.data[0, c], want, atol=1e-6)


def test_pool_all_background():
    feat = np.random.default_rng(0).standard_normal((1, 5, 4, 4)).astype(np.float32)
    sm = region_avg_pool(Tensor(feat), np.zeros((1, 16, 16), np.uint8), 8, Linear(5, 3, np.random.default_rng(1)))
    np.testing.assert_array_equal(sm.valid[0], [True] + [False] * 7)
    assert np.all(sm.styles.data[0, 1:] == 0)


@pytest.mark.parametrize("trial", range(20))
def test_pool_matches_loops(trial):
    r = np.random.default_rng(trial)
    n, ch, h = int(r.integers(1, 3)), int(r.integers(1, 5)), int(r.integers(1, 9))
    scale = int(r.choice([1, 2, 4]))
    feat = r.standard_normal((n, ch, h, h))
    labels = r.integers(0, 8, (n, h * scale, h * scale)).astype(np.uint8)
    sm = region_avg_pool(Tensor(feat.astype(np.float32)), labels, 8)
    want, valid = pool_loops(feat, labels, 8)
    np.testing.assert_array_equal(sm.valid, valid)
    np.testing.assert_allclose(sm.styles.data, want, atol=1e-5)


def test_pool_gradient_uniform_over_region():
    labels = np.array([[[0, 0, 1], [1, 1, 1], [2, 2, 2]]], np.uint8)
    feat = Tensor(np.zeros((1, 1, 3, 3), np.float32), requires_grad=True)
    sm = region_avg_pool(feat, labels, 8)
    (sm.styles * Tensor(np.arange(8, dtype=np.float32).reshape(1, 8, 1))).sum().backward()
    want = np.array([[0.0, 0.0, 0.25], [0.25, 0.25, 0.25], [2 / 3, 2 / 3, 2 / 3]])
    np.testing.assert_allclose(feat.grad[0, 0], want, atol=1e-7)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_broadcast_pool_identity_on_region_constant_fields(seed, ch):
    r = np.random.default_rng(seed)
    labels = r.integers(0, 8, (1, 8, 8)).astype(np.uint8)
    table = r.standard_normal((8, ch)).astype(np.float32)
    feat = table[labels[0]].transpose(2, 0, 1)[None]
    sm = region_avg_pool(Tensor(feat), labels, 8)
    back = broadcast_style(sm, labels, 8, 8).data
    np.testing.assert_allclose(back, feat, rtol=1e-6, atol=1e-6)


def test_invalid_rows_zero_after_encoding():
    enc = small_encoder().eval()
    x = Tensor(np.random.default_rng(0).random((2, 3, 32, 32)).astype(np.float32))
    labels = np.zeros((2, 32, 32), np.uint8)
    labels[0, :16] = 2
    labels[1, 5:9, 5:9] = 6
    with no_grad():
        sm = enc(x, labels)
    assert sm.styles.shape == (2, 8, 7)
    np.testing.assert_array_equal(sm.valid[0], [1, 0, 1, 0, 0, 0, 0, 0])
    assert np.all(sm.styles.data[~sm.valid] == 0)
    assert np.all(sm.styles.data[sm.valid] != 0)
