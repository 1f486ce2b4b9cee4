import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (bilinear_point, bilinear_sample_loops, conv2d_loops, deform_conv_loops,
                     depthwise_loops)
from srnet import ops
from srnet.fam import (DeformParams, deform_conv, estimate_deform, init_fam, make_grid,
                       predict_offsets, run_fam, sampling_coords)
from srnet.tensor import ParamSet, Tensor


def _fam_params(ck=3, cv=2, seed=0):
    p = ParamSet(np.float64)
    init_fam(p, "fam", np.random.default_rng(seed), ck, cv)
    return p.subset("fam")


def _randomize(p, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    for name, t in p.items():
        p.set(name, scale * rng.standard_normal(t.shape))
    return p


# grid

def test_grid_2x2_corners():
    pts = make_grid(2, 2).points.data
    np.testing.assert_array_equal(pts[0, 0], [-1, -1])
    np.testing.assert_array_equal(pts[1, 1], [1, 1])
    np.testing.assert_array_equal(pts[0, 1], [1, -1])


def test_grid_downsampled():
    g = make_grid(4, 4, 2)
    assert g.points.shape == (2, 2, 2) and g.g == 2
    np.testing.assert_array_equal(g.points.data[1, 1], [1, 1])


def test_grid_center():
    np.testing.assert_array_equal(make_grid(3, 3).points.data[1, 1], [0, 0])


def test_grid_single_extent_axis():
    pts = make_grid(1, 3).points.data
    np.testing.assert_array_equal(pts[0, :, 1], 0)
    np.testing.assert_array_equal(pts[0, :, 0], [-1, 0, 1])


def test_grid_linear_spacing():
    pts = make_grid(5, 7, dtype=np.float64).points.data
    np.testing.assert_allclose(np.diff(pts[0, :, 0]), 2 / 6)
    np.testing.assert_allclose(np.diff(pts[:, 0, 1]), 2 / 4)


def test_grid_rejects_non_divisible():
    with pytest.raises(ValueError):
        make_grid(5, 4, 2)


# offsets

def test_offsets_zero_at_init():
    rng = np.random.default_rng(1)
    p = _fam_params()
    off = predict_offsets(Tensor(rng.standard_normal((4, 4, 3))), Tensor(rng.standard_normal((4, 4, 3))), p)
    assert off.shape == (4, 4, 2)
    np.testing.assert_array_equal(off.data, 0)


def test_offsets_composition_oracle():
    rng = np.random.default_rng(2)
    p = _randomize(_fam_params(), 3)
    kq, kl = rng.standard_normal((4, 6, 3)), rng.standard_normal((4, 6, 3))
    x = np.concatenate([kq, kl], axis=2)
    ref = conv2d_loops(depthwise_loops(x, p["offset.dw"].data), p["offset.pw"].data, bias=p["offset.b"].data)
    got = predict_offsets(Tensor(kq), Tensor(kl), p).data
    np.testing.assert_allclose(got, ref, atol=1e-12)
    pooled = predict_offsets(Tensor(kq), Tensor(kl), p, g=2).data
    np.testing.assert_allclose(pooled, ref.reshape(2, 2, 3, 2, 2).mean(axis=(1, 3)), atol=1e-12)
    again = predict_offsets(Tensor(kq), Tensor(kl), p).data
    assert again.tobytes() == got.tobytes()


# bilinear sampling

def test_identity_sampling():
    rng = np.random.default_rng(4)
    v = rng.standard_normal((5, 7, 3)).astype(np.float32)
    out = ops.bilinear_sample(Tensor(v), make_grid(5, 7).points)
    np.testing.assert_allclose(out.data, v, atol=1e-6)


def test_midpoint_of_zero_and_four():
    v = Tensor(np.array([[[0.0], [4.0]]]))
    out = ops.sample_pixels(v, Tensor(np.array([0.5])), Tensor(np.array([0.0])))
    assert out.data[0, 0] == 2.0


def test_out_of_range_reads_zero():
    v = Tensor(np.ones((3, 3, 1)))
    out = ops.sample_pixels(v, Tensor(np.array([-1.0, 3.0, -0.5, 1e9])), Tensor(np.array([1.0, 1.0, 1.0, 1.0])))
    np.testing.assert_allclose(out.data[:, 0], [0.0, 0.0, 0.5, 0.0])


def test_non_finite_coordinates_rejected():
    with pytest.raises(FloatingPointError):
        ops.sample_pixels(Tensor(np.ones((2, 2, 1))), Tensor(np.array([np.nan])), Tensor(np.array([0.0])))


def test_bilinear_matches_four_neighbor_oracle():
    rng = np.random.default_rng(5)
    v = rng.standard_normal((4, 5, 2))
    coords = rng.uniform(-1.3, 1.3, size=(3, 4, 2))
    got = ops.bilinear_sample(Tensor(v), Tensor(coords)).data
    np.testing.assert_allclose(got, bilinear_sample_loops(v, coords), atol=1e-12)


def test_four_neighbor_equals_full_tent_sum():
    rng = np.random.default_rng(6)
    v = rng.standard_normal((4, 4, 2))
    for x, y in rng.uniform(-1.5, 4.5, size=(50, 2)):
        got = ops.sample_pixels(Tensor(v), Tensor(np.array([x])), Tensor(np.array([y]))).data[0]
        np.testing.assert_allclose(got, bilinear_point(v, x, y), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 4), st.floats(0, 3))
def test_partition_of_unity(x, y):
    out = ops.sample_pixels(Tensor(np.ones((4, 5, 1))), Tensor(np.array([x])), Tensor(np.array([y])))
    assert abs(out.data[0, 0] - 1.0) <= 1e-6


def test_upsampled_offsets_when_coarse():
    grid = make_grid(4, 4, 2, np.float64)
    off = Tensor(np.full((2, 2, 2), 0.1))
    coords = sampling_coords(grid, off, 4, 4).data
    assert coords.shape == (4, 4, 2)
    np.testing.assert_allclose(coords[0, 0], [-0.9, -0.9])
    np.testing.assert_allclose(coords[3, 3], [1.1, 1.1])


# deform heads

def test_estimate_deform_init_contract():
    rng = np.random.default_rng(7)
    d = estimate_deform(Tensor(rng.standard_normal((3, 4, 2))), Tensor(rng.standard_normal((3, 4, 2))), _fam_params())
    assert d.offsets.shape == (3, 4, 18) and d.modulation.shape == (3, 4, 9)
    np.testing.assert_array_equal(d.offsets.data, 0)
    np.testing.assert_array_equal(d.modulation.data, 0.5)


def test_estimate_deform_conv_oracle():
    rng = np.random.default_rng(8)
    p = _randomize(_fam_params(), 9)
    a, q = rng.standard_normal((3, 4, 2)), rng.standard_normal((3, 4, 2))
    x = np.concatenate([a, q], axis=2)
    d = estimate_deform(Tensor(a), Tensor(q), p)
    np.testing.assert_allclose(d.offsets.data, conv2d_loops(x, p["deform_offset.w"].data, bias=p["deform_offset.b"].data), atol=1e-12)
    raw = conv2d_loops(x, p["deform_mod.w"].data, bias=p["deform_mod.b"].data)
    np.testing.assert_allclose(d.modulation.data, 1 / (1 + np.exp(-raw)), atol=1e-12)
    assert ((d.modulation.data > 0) & (d.modulation.data < 1)).all()


def test_estimate_deform_shape_mismatch():
    with pytest.raises(ValueError):
        estimate_deform(Tensor(np.ones((2, 2, 2))), Tensor(np.ones((2, 3, 2))), _fam_params())


# deformable convolution

def _deform(offsets, modulation):
    return DeformParams(Tensor(offsets), Tensor(modulation))


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-12)])
def test_zero_offset_unit_modulation_is_conv(dtype, tol):
    rng = np.random.default_rng(10)
    x = rng.standard_normal((5, 6, 3)).astype(dtype)
    k = rng.standard_normal((3, 3, 3, 4)).astype(dtype)
    d = _deform(np.zeros((5, 6, 18), dtype), np.ones((5, 6, 9), dtype))
    got = deform_conv(Tensor(x), d, Tensor(k)).data
    ref = conv2d_loops(x, k)
    assert np.max(np.abs(got - ref) / np.maximum(1, np.abs(ref))) <= tol


def test_zero_modulation_annihilates():
    rng = np.random.default_rng(11)
    d = _deform(rng.standard_normal((4, 4, 18)), np.zeros((4, 4, 9)))
    out = deform_conv(Tensor(rng.standard_normal((4, 4, 2))), d, Tensor(rng.standard_normal((3, 3, 2, 2))))
    np.testing.assert_array_equal(out.data, 0)


@pytest.mark.parametrize("seed", range(3))
def test_deform_conv_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((6, 6, 2))
    off = rng.uniform(-2.5, 2.5, size=(6, 6, 18))
    mod = rng.uniform(0, 1, size=(6, 6, 9))
    k = rng.standard_normal((3, 3, 2, 2))
    got = deform_conv(Tensor(x), _deform(off, mod), Tensor(k)).data
    ref = deform_conv_loops(x, off, mod, k)
    assert np.max(np.abs(got - ref) / np.maximum(1, np.abs(ref))) <= 1e-6


def test_deform_conv_kernel_shape_checked():
    d = _deform(np.zeros((2, 2, 18)), np.ones((2, 2, 9)))
    with pytest.raises(ValueError):
        deform_conv(Tensor(np.ones((2, 2, 3))), d, Tensor(np.ones((1, 1, 3, 3))))


def test_fam_at_init_is_half_modulated_conv():
    rng = np.random.default_rng(12)
    p = _fam_params(ck=2, cv=3)
    kq, kl = rng.standard_normal((4, 4, 2)), rng.standard_normal((4, 4, 2))
    vq, vl = rng.standard_normal((4, 4, 3)), rng.standard_normal((4, 4, 3))
    f_loc, extra = run_fam(Tensor(kq), Tensor(vq), Tensor(kl), Tensor(vl), p)
    np.testing.assert_allclose(extra["aux_value"].data, vl, atol=1e-12)
    ref = 0.5 * conv2d_loops(vl, p["deform.w"].data) + p["deform.b"].data
    np.testing.assert_allclose(f_loc.data, ref, atol=1e-12)
