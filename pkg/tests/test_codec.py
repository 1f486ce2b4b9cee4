import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import conv2d_loops
from srnet import ops
from srnet.codec import (cross_entropy, decode, encode_memory, encode_query, init_decoder,
                         init_encoder, probabilities, soft_aggregate)
from srnet.tensor import ParamSet, Tensor


def _enc(cin, stride=4, seed=0, width=4, ck=3, cv=5):
    p = ParamSet(np.float64)
    init_encoder(p, "e", np.random.default_rng(seed), cin, width, ck, cv, stride)
    return p.subset("e")


def _dec(cv=5, skip=4, stride=4, seed=0, width=4):
    p = ParamSet(np.float64)
    init_decoder(p, "d", np.random.default_rng(seed), cv, skip, width, stride)
    return p.subset("d")


def _zeroed(p):
    for name, t in p.items():
        p.set(name, np.zeros(t.shape))
    return p


def _trunk_np(x, p, n):
    skip = None
    for i in range(n):
        x = np.maximum(conv2d_loops(x, p[f"block{i}.w"].data, stride=2, pad=1, bias=p[f"block{i}.b"].data), 0)
        skip = x if i == 0 else skip
    return x, skip


def test_stride4_shapes():
    rng = np.random.default_rng(0)
    q = encode_query(Tensor(rng.uniform(size=(64, 64, 3))), _enc(3))
    assert q.key.shape == (16, 16, 3) and q.value.shape == (16, 16, 5) and q.skip2.shape == (32, 32, 4)


def test_stride8_shapes():
    q = encode_query(Tensor(np.ones((16, 24, 3))), _enc(3, stride=8), stride=8)
    assert q.key.shape == (2, 3, 3)


def test_zero_weights_zero_features():
    q = encode_query(Tensor(np.random.default_rng(1).uniform(size=(8, 8, 3))), _zeroed(_enc(3)))
    np.testing.assert_array_equal(q.key.data, 0)
    np.testing.assert_array_equal(q.value.data, 0)


def test_query_encoder_composition_oracle():
    rng = np.random.default_rng(2)
    p = _enc(3, seed=3)
    x = rng.uniform(size=(8, 12, 3))
    f, skip = _trunk_np(x, p, 2)
    q = encode_query(Tensor(x), p)
    np.testing.assert_allclose(q.skip2.data, skip, atol=1e-12)
    np.testing.assert_allclose(q.key.data, conv2d_loops(f, p["key.w"].data, bias=p["key.b"].data), atol=1e-12)
    np.testing.assert_allclose(q.value.data, conv2d_loops(f, p["value.w"].data, bias=p["value.b"].data), atol=1e-12)


def test_memory_encoder_composition_oracle():
    rng = np.random.default_rng(4)
    p = _enc(4, seed=5)
    x, m = rng.uniform(size=(8, 8, 3)), (rng.uniform(size=(8, 8)) > 0.5).astype(float)
    f, _ = _trunk_np(np.concatenate([x, m[..., None]], axis=2), p, 2)
    k, v = encode_memory(Tensor(x), Tensor(m), p)
    np.testing.assert_allclose(k.data, conv2d_loops(f, p["key.w"].data, bias=p["key.b"].data), atol=1e-12)
    np.testing.assert_allclose(v.data, conv2d_loops(f, p["value.w"].data, bias=p["value.b"].data), atol=1e-12)


def test_memory_with_full_mask_is_constant_channel_encoding():
    rng = np.random.default_rng(6)
    p = _enc(4)
    x = rng.uniform(size=(8, 8, 3))
    k1, v1 = encode_memory(Tensor(x), Tensor(np.ones((8, 8, 1))), p)
    f, _ = _trunk_np(np.concatenate([x, np.ones((8, 8, 1))], axis=2), p, 2)
    np.testing.assert_allclose(v1.data, conv2d_loops(f, p["value.w"].data, bias=p["value.b"].data), atol=1e-12)
    k0, _ = encode_memory(Tensor(x), Tensor(np.zeros((8, 8))), p)
    assert not np.allclose(k0.data, k1.data)


def test_extent_checks():
    with pytest.raises(ValueError):
        encode_query(Tensor(np.ones((10, 8, 3))), _enc(3))
    with pytest.raises(ValueError):
        encode_memory(Tensor(np.ones((8, 8, 3))), Tensor(np.ones((4, 8))), _enc(4))
    with pytest.raises(ValueError):
        _enc(3, stride=6)
    with pytest.raises(ValueError):
        _enc(3, stride=2)


def test_decode_shape_and_zero_logits():
    out = decode(Tensor(np.zeros((16, 16, 5))), Tensor(np.zeros((32, 32, 4))), _dec())
    assert out.shape == (64, 64, 1)
    np.testing.assert_array_equal(out.data, 0)
    probs = probabilities(soft_aggregate([out])).data
    np.testing.assert_allclose(probs, 0.5, atol=1e-15)


def test_decode_composition_oracle():
    rng = np.random.default_rng(7)
    p = _dec(cv=2, skip=1, width=2, seed=8)
    for name, t in p.items():
        p.set(name, 0.5 * rng.standard_normal(t.shape))
    f, skip = rng.standard_normal((2, 3, 2)), rng.standard_normal((4, 6, 1))

    def up(a):
        # align-corners: output i samples input position i * (n - 1) / (2n - 1)
        h, w, ch = a.shape
        out = np.zeros((2 * h, 2 * w, ch))
        for i in range(2 * h):
            for j in range(2 * w):
                y, x = i * (h - 1) / (2 * h - 1), j * (w - 1) / (2 * w - 1)
                y0, x0 = min(int(y), h - 2) if h > 1 else 0, min(int(x), w - 2) if w > 1 else 0
                fy, fx = y - y0, x - x0
                for yy, wy in ((y0, 1 - fy), (y0 + 1, fy)):
                    for xx, wx in ((x0, 1 - fx), (x0 + 1, fx)):
                        if wy * wx:
                            out[i, j] += wy * wx * a[yy, xx]
        return out

    x = np.maximum(conv2d_loops(np.concatenate([up(f), skip], axis=2), p["stage0.w"].data, bias=p["stage0.b"].data), 0)
    x = np.maximum(conv2d_loops(up(x), p["stage1.w"].data, bias=p["stage1.b"].data), 0)
    ref = conv2d_loops(x, p["logit.w"].data, bias=p["logit.b"].data)
    np.testing.assert_allclose(decode(Tensor(f), Tensor(skip), p).data, ref, atol=1e-12)


def test_upsampling_preserves_constants():
    out = ops.upsample2x(Tensor(np.full((3, 5, 2), 1.25))).data
    np.testing.assert_allclose(out, 1.25, atol=1e-15)


def test_soft_aggregate_two_objects_by_hand():
    l1, l2 = 0.3, -1.1
    s = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
    raw = np.array([(1 - s(l1)) * (1 - s(l2)), s(l1), s(l2)])
    lp = soft_aggregate([Tensor(np.full((1, 1, 1), l1)), Tensor(np.full((1, 1, 1), l2))]).data[0, 0]
    np.testing.assert_allclose(np.exp(lp), raw / raw.sum(), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 4), st.floats(0.1, 60))
def test_soft_aggregate_is_a_distribution(seed, n, scale):
    rng = np.random.default_rng(seed)
    logits = [Tensor(scale * rng.standard_normal((3, 4, 1))) for _ in range(n)]
    probs = probabilities(soft_aggregate(logits)).data
    assert probs.shape == (3, 4, n + 1)
    assert np.isfinite(probs).all() and (probs >= 0).all() and (probs <= 1).all()
    np.testing.assert_allclose(probs.sum(axis=2), 1.0, atol=1e-5)
    assert probs.argmax(axis=2).shape == (3, 4)


def test_cross_entropy_uniform():
    lp = Tensor(np.log(np.full((2, 2, 3), 1 / 3)))
    assert float(cross_entropy(lp, np.array([[0, 1], [2, 0]])).data) == pytest.approx(np.log(3))
