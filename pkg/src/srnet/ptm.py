"""Prototype transformer: per-object prototype vs. pixel-feature cross-attention.

A prototype is pooled from the global memory values, the memory readout and
the aligned local feature are fused into a pixel feature, and then the two
are refined in alternation: the prototype attends over all pixels, and the
pixels are re-activated after gating by the prototype.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import ParamSet, Tensor, concat, relu, reshape, softmax, softplus, tsum

WEIGHT_EPS = 1e-6


def init_prototype(mem_values: Tensor, params: ParamSet) -> Tensor | None:
    """Weighted pool of transformed memory values, ``[1, Cv]``.

    ``sum F(v_i) w_i / sum w_i`` over every memory pixel, where ``F`` is the
    value MLP and ``w_i = softplus(W(v_i)) + eps`` keeps the weights positive.
    Returns ``None`` when there is no memory.
    """
    if mem_values is None:
        return None
    flat = reshape(mem_values, (-1, mem_values.shape[-1]))
    feats = ops.mlp(flat, params.subset("proto_value"))
    weights = softplus(ops.mlp(flat, params.subset("proto_weight"))) + WEIGHT_EPS
    num = tsum(feats * weights, axis=0, keepdims=True)
    return num / tsum(weights, axis=0, keepdims=True)


def fuse(f_mem: Tensor, f_loc: Tensor, params: ParamSet) -> Tensor:
    """1x1 projection of ``F_mem ⊕ F_loc``, two residual blocks, then channel + spatial attention."""
    if f_mem.shape != f_loc.shape:
        raise ValueError(f"cannot fuse {f_mem.shape} with {f_loc.shape}")
    x = ops.conv2d(concat([f_mem, f_loc], axis=2), params["proj.w"], params["proj.b"])
    for i in range(2):
        r = relu(ops.conv2d(x, params[f"res{i}.conv1.w"], params[f"res{i}.conv1.b"]))
        x = x + ops.conv2d(r, params[f"res{i}.conv2.w"], params[f"res{i}.conv2.b"])
    x = ops.channel_attention(x, params.subset("cbam_channel"))
    return ops.spatial_attention(x, params.subset("cbam_spatial"))


def attention_weights(proto: Tensor, pixels: Tensor, params: ParamSet) -> tuple[Tensor, Tensor]:
    """Single-query attention of the prototype over all ``H*W`` pixels.

    Returns ``(weights [1, HW], values [HW, Cv])``.
    """
    H, W, C = pixels.shape
    pos = params["pos"]
    if pos.shape[0] != H * W:
        raise ValueError(f"position embedding is bound to {pos.shape[0]} pixels, feature has {H * W}")
    flat = reshape(pixels, (H * W, C))
    q = proto @ params["wq"]
    k = flat @ params["wk"] + pos
    v = flat @ params["wv"]
    scores = (q @ k.T) * (1.0 / math.sqrt(C))
    return softmax(scores, axis=1), v


def update_prototype(proto: Tensor, pixels: Tensor, params: ParamSet,
                     gate: Tensor | None = None, return_attention: bool = False):
    """``G' = MLP(softmax(q (k + P_k)^T / sqrt(C)) v ⊙ gate)``; ``gate`` defaults to ``proto``."""
    attn, v = attention_weights(proto, pixels, params)
    attended = attn @ v
    out = ops.mlp(attended * (proto if gate is None else gate), params.subset("mlp"))
    return (out, attn) if return_attention else out


def activate_pixels(proto: Tensor, pixels: Tensor, params: ParamSet) -> Tensor:
    """Gate pixels by the broadcast prototype, then conv3x3-ReLU-conv3x3 and channel attention."""
    C = pixels.shape[-1]
    x = pixels * reshape(proto, (1, 1, C))
    x = relu(ops.conv2d(x, params["conv1.w"], params["conv1.b"]))
    x = ops.conv2d(x, params["conv2.w"], params["conv2.b"])
    return ops.channel_attention(x, params.subset("ca"))


def run_ptm(f_mem: Tensor, f_loc: Tensor, mem_values: Tensor, params: ParamSet, rounds: int = 3,
            gate_with_initial: bool = False, trace: list | None = None) -> Tensor:
    """Fuse, then ``rounds`` alternations of prototype update and pixel activation.

    ``rounds = 0`` returns the fused feature unchanged (the PTM-off ablation).
    Attention maps of each round are appended to ``trace`` when given.
    """
    if rounds < 0:
        raise ValueError("rounds must be non-negative")
    f = fuse(f_mem, f_loc, params.subset("fuse"))
    if rounds == 0:
        return f
    g0 = init_prototype(mem_values, params)
    if g0 is None:
        raise ValueError("prototype needs at least one memory frame")
    g = g0
    for n in range(rounds):
        rp = params.subset(f"round{n}")
        gate = g0 if gate_with_initial else g
        g, attn = update_prototype(g, f, rp.subset("attn"), gate=gate, return_attention=True)
        f = activate_pixels(g0 if gate_with_initial else g, f, rp.subset("act"))
        if trace is not None:
            trace.append(attn)
    return f


def init_ptm(params: ParamSet, prefix: str, rng, cv: int, hw: int, rounds: int = 3) -> None:
    ops.init_mlp(params, f"{prefix}.proto_value", rng, cv, cv, cv)
    ops.init_mlp(params, f"{prefix}.proto_weight", rng, cv, cv, 1)
    fp = f"{prefix}.fuse"
    ops.init_conv(params, f"{fp}.proj", rng, 1, 2 * cv, cv)
    for i in range(2):
        ops.init_conv(params, f"{fp}.res{i}.conv1", rng, 3, cv, cv)
        ops.init_conv(params, f"{fp}.res{i}.conv2", rng, 3, cv, cv)
    ops.init_channel_attention(params, f"{fp}.cbam_channel", rng, cv)
    ops.init_spatial_attention(params, f"{fp}.cbam_spatial", rng)
    for n in range(rounds):
        ap = f"{prefix}.round{n}.attn"
        for w in ("wq", "wk", "wv"):
            params.add(f"{ap}.{w}", ops.kaiming_uniform(rng, (cv, cv), cv))
        params.add(f"{ap}.pos", rng.normal(0.0, 0.02, size=(hw, cv)))
        ops.init_linear(params, f"{ap}.mlp.l1", rng, cv, cv)
        ops.init_linear(params, f"{ap}.mlp.l2", rng, cv, cv)
        # unit output bias: the prototype gate starts near transparent instead of shrinking F each round
        params.set(f"{ap}.mlp.l2.b", np.ones(cv))
        xp = f"{prefix}.round{n}.act"
        ops.init_conv(params, f"{xp}.conv1", rng, 3, cv, cv)
        ops.init_conv(params, f"{xp}.conv2", rng, 3, cv, cv)
        ops.init_channel_attention(params, f"{xp}.ca", rng, cv)
