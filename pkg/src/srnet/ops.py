"""Differentiable building blocks on ``[H, W, C]`` feature maps.

Convolutions use cross-correlation semantics with kernels laid out as
``[kh, kw, Cin, Cout]``. Sampling follows the tent kernel
``g(a, b) = max(0, 1 - |a - b|)`` with zero contribution from positions
outside the map.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import (
    ParamSet,
    Tensor,
    _record,
    concat,
    mean,
    relu,
    reshape,
    sigmoid,
    tmax,
)


def _check_hwc(x: Tensor, what: str = "input") -> None:
    if x.ndim != 3:
        raise ValueError(f"{what} must be [H, W, C], got shape {x.shape}")


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((pad, pad), (pad, pad), (0, 0)))


# -- convolution ------------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           pad: int | None = None) -> Tensor:
    """2-D cross-correlation of ``x[H, W, Cin]`` with ``kernel[kh, kw, Cin, Cout]``.

    ``pad`` defaults to ``(kh - 1) // 2`` (same-size output at stride 1).
    """
    _check_hwc(x)
    if kernel.ndim != 4:
        raise ValueError(f"kernel must be [kh, kw, Cin, Cout], got {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if x.shape[2] != cin:
        raise ValueError(f"input has {x.shape[2]} channels but kernel expects {cin}")
    if pad is None:
        pad = (kh - 1) // 2
    H, W, _ = x.shape
    ho = (H + 2 * pad - kh) // stride + 1
    wo = (W + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("kernel larger than padded input")

    xp = _pad_hw(x.data, pad)
    # [ho, wo, Cin, kh, kw] -> [ho*wo, kh*kw*Cin]
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::stride, ::stride][:ho, :wo]
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(ho * wo, kh * kw * cin)
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out = (cols @ kmat).reshape(ho, wo, cout)
    if bias is not None:
        out = out + bias.data
    xshape, xpshape = x.shape, xp.shape

    def bw(g):
        g2 = g.reshape(ho * wo, cout)
        gk = (cols.T @ g2).reshape(kh, kw, cin, cout)
        gcols = (g2 @ kmat.T).reshape(ho, wo, kh, kw, cin)
        gxp = np.zeros(xpshape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += gcols[:, :, i, j]
        gx = gxp[pad:pad + xshape[0], pad:pad + xshape[1]] if pad else gxp
        grads = [gx, gk]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _record(out, "conv2d", parents, bw)


def depthwise_conv2d(x: Tensor, kernel: Tensor, pad: int | None = None) -> Tensor:
    """Per-channel 2-D correlation, ``kernel[kh, kw, C]``, stride 1."""
    _check_hwc(x)
    kh, kw, c = kernel.shape
    if x.shape[2] != c:
        raise ValueError(f"input has {x.shape[2]} channels but depthwise kernel has {c}")
    if pad is None:
        pad = (kh - 1) // 2
    H, W, _ = x.shape
    ho, wo = H + 2 * pad - kh + 1, W + 2 * pad - kw + 1
    xp = _pad_hw(x.data, pad)
    k = kernel.data
    out = np.zeros((ho, wo, c), dtype=np.result_type(x.dtype, k.dtype))
    for i in range(kh):
        for j in range(kw):
            out += xp[i:i + ho, j:j + wo] * k[i, j]

    def bw(g):
        gk = np.empty_like(k)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gk[i, j] = (xp[i:i + ho, j:j + wo] * g).sum(axis=(0, 1))
                gxp[i:i + ho, j:j + wo] += g * k[i, j]
        gx = gxp[pad:pad + H, pad:pad + W] if pad else gxp
        return gx, gk

    return _record(out, "depthwise_conv2d", (x, kernel), bw)


def separable_conv2d(x: Tensor, depthwise: Tensor, pointwise: Tensor, bias: Tensor | None = None) -> Tensor:
    """Depthwise ``[kh, kw, C]`` correlation followed by a 1x1 ``[1, 1, C, Cout]`` conv."""
    if pointwise.ndim != 4 or pointwise.shape[:2] != (1, 1):
        raise ValueError(f"pointwise kernel must be [1, 1, C, Cout], got {pointwise.shape}")
    return conv2d(depthwise_conv2d(x, depthwise), pointwise, bias, stride=1, pad=0)


def avg_pool(x: Tensor, g: int) -> Tensor:
    """Non-overlapping ``g x g`` average pooling; ``g`` must divide H and W."""
    H, W, C = x.shape
    if H % g or W % g:
        raise ValueError(f"pool factor {g} does not divide {H}x{W}")
    if g == 1:
        return x
    return mean(reshape(x, (H // g, g, W // g, g, C)), axis=(1, 3))


# -- sampling ---------------------------------------------------------------

def sample_pixels(v: Tensor, px: Tensor, py: Tensor) -> Tensor:
    """Bilinearly read ``v[H, W, C]`` at pixel coordinates ``(px, py)``.

    ``px`` and ``py`` share an arbitrary shape ``S``; the result has shape
    ``S + (C,)``. Corners outside the map contribute zero. Gradients flow to
    the values and to both coordinate arrays.
    """
    _check_hwc(v, "sampled map")
    if px.shape != py.shape:
        raise ValueError("coordinate arrays must share a shape")
    H, W, C = v.shape
    vflat = v.data.reshape(H * W, C)
    x, y = px.data, py.data
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise FloatingPointError("sampling coordinates are not finite")
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0).astype(v.dtype)
    fy = (y - y0).astype(v.dtype)
    # anything beyond one pixel outside the map reads zero either way
    x0 = np.clip(x0, -2, W + 1).astype(np.int64)
    y0 = np.clip(y0, -2, H + 1).astype(np.int64)

    corners = []
    out = np.zeros(x.shape + (C,), dtype=v.dtype)
    for dy in (0, 1):
        wy = fy if dy else 1 - fy
        yi = y0 + dy
        for dx in (0, 1):
            wx = fx if dx else 1 - fx
            xi = x0 + dx
            valid = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
            idx = np.where(valid, yi * W + xi, 0)
            vals = vflat[idx] * valid[..., None]
            out += (wx * wy)[..., None] * vals
            corners.append((dx, dy, wx, wy, idx, valid, vals))

    def bw(g):
        gv = gx = gy = None
        if v.requires_grad:
            gv = np.zeros((H * W, C), dtype=g.dtype)
        if px.requires_grad:
            gx = np.zeros(x.shape, dtype=g.dtype)
        if py.requires_grad:
            gy = np.zeros(y.shape, dtype=g.dtype)
        for dx, dy, wx, wy, idx, valid, vals in corners:
            if gv is not None:
                w = (wx * wy * valid)[..., None]
                np.add.at(gv, idx.ravel(), (g * w).reshape(-1, C))
            if gx is not None or gy is not None:
                gdot = (g * vals).sum(axis=-1)
                if gx is not None:
                    gx += (1 if dx else -1) * wy * gdot
                if gy is not None:
                    gy += (1 if dy else -1) * wx * gdot
        return (None if gv is None else gv.reshape(H, W, C)), gx, gy

    return _record(out, "sample_pixels", (v, px, py), bw)


def denormalize(coords: Tensor, H: int, W: int) -> tuple[Tensor, Tensor]:
    """Map normalized ``[..., 2]`` (x, y) coordinates in [-1, 1] to pixel units."""
    sx = coords[..., 0] + 1.0
    sy = coords[..., 1] + 1.0
    return sx * ((W - 1) / 2.0), sy * ((H - 1) / 2.0)


def bilinear_sample(v: Tensor, coords: Tensor) -> Tensor:
    """Resample ``v[H, W, C]`` at normalized coordinates ``coords[H', W', 2]``.

    (-1, -1) is the top-left pixel centre and (+1, +1) the bottom-right one.
    """
    H, W, _ = v.shape
    px, py = denormalize(coords, H, W)
    return sample_pixels(v, px, py)


def interp_matrix(n_out: int, n_in: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic linear interpolation matrix with aligned end points."""
    A = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1 or n_out == 1:
        A[:, 0] = 1.0
        return A
    src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    f = src - i0
    i1 = np.minimum(i0 + 1, n_in - 1)
    rows = np.arange(n_out)
    np.add.at(A, (rows, i0), 1 - f)
    np.add.at(A, (rows, i1), f)
    return A


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with corner-aligned grids; constants stay constant."""
    _check_hwc(x)
    H, W, _ = x.shape
    Ah = interp_matrix(out_h, H, x.dtype)
    Aw = interp_matrix(out_w, W, x.dtype)
    out = np.einsum("bw,awc->abc", Aw, np.einsum("ah,hwc->awc", Ah, x.data))

    def bw(g):
        return (np.einsum("ah,awc->hwc", Ah, np.einsum("bw,abc->awc", Aw, g)),)

    return _record(out, "resize_bilinear", (x,), bw)


def upsample2x(x: Tensor) -> Tensor:
    H, W, _ = x.shape
    return resize_bilinear(x, 2 * H, 2 * W)


# -- dense layers -------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear layer expects {w.shape[0]} input features, got {x.shape[-1]}")
    y = x @ w
    return y if b is None else y + b


def mlp(x: Tensor, layers: ParamSet) -> Tensor:
    """Two affine layers with a ReLU between, applied over the last axis."""
    h = relu(linear(x, layers["l1.w"], layers["l1.b"]))
    return linear(h, layers["l2.w"], layers["l2.b"])


def channel_attention(x: Tensor, params: ParamSet) -> Tensor:
    """Scale each channel by a logistic gate computed from its spatial mean."""
    _check_hwc(x)
    pooled = mean(x, axis=(0, 1), keepdims=True)
    scale = sigmoid(mlp(pooled, params))
    return x * scale


def spatial_attention(x: Tensor, params: ParamSet) -> Tensor:
    """Gate every position by a 7x7 conv over channel-wise [max, mean] pools."""
    _check_hwc(x)
    pooled = concat([tmax(x, axis=2, keepdims=True), mean(x, axis=2, keepdims=True)], axis=2)
    gate = sigmoid(conv2d(pooled, params["w"], params["b"]))
    return x * gate


# -- initialisation -------------------------------------------------------------

def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_conv(params: ParamSet, name: str, rng, kh: int, cin: int, cout: int,
              zero: bool = False, bias: bool = True) -> None:
    shape = (kh, kh, cin, cout)
    w = np.zeros(shape) if zero else kaiming_uniform(rng, shape, kh * kh * cin)
    params.add(f"{name}.w", w)
    if bias:
        params.add(f"{name}.b", np.zeros(cout))


def init_linear(params: ParamSet, name: str, rng, cin: int, cout: int, zero: bool = False) -> None:
    w = np.zeros((cin, cout)) if zero else kaiming_uniform(rng, (cin, cout), cin)
    params.add(f"{name}.w", w)
    params.add(f"{name}.b", np.zeros(cout))


def init_mlp(params: ParamSet, name: str, rng, cin: int, hidden: int, cout: int) -> None:
    init_linear(params, f"{name}.l1", rng, cin, hidden)
    init_linear(params, f"{name}.l2", rng, hidden, cout)


def init_channel_attention(params: ParamSet, name: str, rng, c: int, reduction: int = 4) -> None:
    init_mlp(params, name, rng, c, max(1, c // reduction), c)


def init_spatial_attention(params: ParamSet, name: str, rng) -> None:
    init_conv(params, name, rng, 7, 2, 1)
