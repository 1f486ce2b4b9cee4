"""Feature alignment: warp the local memory value towards the query frame.

Offsets predicted from the two keys move a normalized reference grid; the
local value resampled on the moved grid is the auxiliary-frame value, which a
modulated deformable 3x3 convolution then refines into the local feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import ParamSet, Tensor, add, concat, reshape, sigmoid

KERNEL_POINTS = 9


@dataclass(frozen=True)
class SamplingGrid:
    points: Tensor  # [H_G, W_G, 2], (x, y) in [-1, 1]
    g: int


@dataclass(frozen=True)
class DeformParams:
    offsets: Tensor  # [H, W, 18] pixel units, (dy, dx) per kernel point
    modulation: Tensor  # [H, W, 9] in (0, 1)


def _linspace(n: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    return -1.0 + 2.0 * np.arange(n) / (n - 1)


def make_grid(H: int, W: int, g: int = 1, dtype=np.float32) -> SamplingGrid:
    """Uniform reference grid of ``(H/g) x (W/g)`` normalized points."""
    if g < 1 or H % g or W % g:
        raise ValueError(f"grid factor {g} must divide the feature extent {H}x{W}")
    hg, wg = H // g, W // g
    xs, ys = _linspace(wg), _linspace(hg)
    pts = np.stack(np.meshgrid(xs, ys), axis=-1).astype(dtype)
    return SamplingGrid(Tensor(pts), g)


def predict_offsets(query_key: Tensor, local_key: Tensor, params: ParamSet, g: int = 1) -> Tensor:
    """Normalized offset field ``[H/g, W/g, 2]`` from the concatenated keys."""
    if query_key.shape[:2] != local_key.shape[:2]:
        raise ValueError(f"key maps differ spatially: {query_key.shape} vs {local_key.shape}")
    x = concat([query_key, local_key], axis=2)
    out = ops.separable_conv2d(x, params["offset.dw"], params["offset.pw"], params["offset.b"])
    return ops.avg_pool(out, g)


def sampling_coords(grid: SamplingGrid, offsets: Tensor, H: int, W: int) -> Tensor:
    """``p + dp`` brought to the full ``[H, W, 2]`` extent."""
    coords = add(grid.points, offsets)
    if coords.shape[:2] != (H, W):
        coords = ops.resize_bilinear(coords, H, W)
    return coords


def estimate_deform(aux_value: Tensor, query_value: Tensor, params: ParamSet) -> DeformParams:
    """Two independent 3x3 heads over ``aux ⊕ query``: raw offsets and squashed modulation."""
    if aux_value.shape != query_value.shape:
        raise ValueError(f"value maps differ: {aux_value.shape} vs {query_value.shape}")
    x = concat([aux_value, query_value], axis=2)
    offsets = ops.conv2d(x, params["deform_offset.w"], params["deform_offset.b"])
    modulation = sigmoid(ops.conv2d(x, params["deform_mod.w"], params["deform_mod.b"]))
    return DeformParams(offsets, modulation)


def _base_points(H: int, W: int, dtype):
    rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    ky, kx = np.meshgrid([-1, 0, 1], [-1, 0, 1], indexing="ij")
    by = rows[..., None] + ky.ravel()
    bx = cols[..., None] + kx.ravel()
    return Tensor(by.astype(dtype)), Tensor(bx.astype(dtype))


def deform_conv(x: Tensor, d: DeformParams, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Modulated deformable 3x3 convolution (DCNv2 semantics), stride 1.

    ``out[p] = sum_k kernel[k] * m[p, k] * x(p + base_k + O[p, k])`` with the
    reads done by bilinear sampling and zero outside the map.
    """
    H, W, C = x.shape
    kh, kw, cin, cout = kernel.shape
    if (kh, kw) != (3, 3) or cin != C:
        raise ValueError(f"deformable kernel must be [3, 3, {C}, Cout], got {kernel.shape}")
    if d.offsets.shape != (H, W, 2 * KERNEL_POINTS) or d.modulation.shape != (H, W, KERNEL_POINTS):
        raise ValueError("offset/modulation maps do not match the input extent")
    by, bx = _base_points(H, W, x.dtype)
    py = add(by, d.offsets[..., 0::2])
    px = add(bx, d.offsets[..., 1::2])
    sampled = ops.sample_pixels(x, px, py)  # [H, W, 9, C]
    weighted = sampled * reshape(d.modulation, (H, W, KERNEL_POINTS, 1))
    cols = reshape(weighted, (H * W, KERNEL_POINTS * C))
    out = cols @ reshape(kernel, (KERNEL_POINTS * C, cout))
    if bias is not None:
        out = out + bias
    return reshape(out, (H, W, cout))


def run_fam(query_key: Tensor, query_value: Tensor, local_key: Tensor, local_value: Tensor,
            params: ParamSet, g: int = 1) -> tuple[Tensor, dict]:
    """Full alignment path; returns ``F_loc`` and the intermediates."""
    H, W, _ = local_value.shape
    grid = make_grid(H, W, g, local_value.dtype)
    offsets = predict_offsets(query_key, local_key, params, g)
    coords = sampling_coords(grid, offsets, H, W)
    aux = ops.bilinear_sample(local_value, coords)
    d = estimate_deform(aux, query_value, params)
    f_loc = deform_conv(aux, d, params["deform.w"], params["deform.b"])
    return f_loc, {"offsets": offsets, "coords": coords, "aux_value": aux, "deform": d}


def init_fam(params: ParamSet, prefix: str, rng, ck: int, cv: int) -> None:
    """Offset-producing layers start at zero so the module begins as identity sampling."""
    params.add(f"{prefix}.offset.dw", ops.kaiming_uniform(rng, (3, 3, 2 * ck), 9))
    params.add(f"{prefix}.offset.pw", np.zeros((1, 1, 2 * ck, 2)))
    params.add(f"{prefix}.offset.b", np.zeros(2))
    ops.init_conv(params, f"{prefix}.deform_offset", rng, 3, 2 * cv, 2 * KERNEL_POINTS, zero=True)
    ops.init_conv(params, f"{prefix}.deform_mod", rng, 3, 2 * cv, KERNEL_POINTS, zero=True)
    ops.init_conv(params, f"{prefix}.deform", rng, 3, cv, cv)
