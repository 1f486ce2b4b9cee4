"""Small convolutional encoders/decoder standing in for the ResNet backbones.

The trailing number in names is the stride, e.g. ``skip2`` is a stride-2 map.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import ops
from .tensor import (
    ParamSet,
    Tensor,
    concat,
    exp,
    log_sigmoid,
    log_softmax,
    neg,
    relu,
    tsum,
)


class QueryFeatures(NamedTuple):
    key: Tensor
    value: Tensor
    skip2: Tensor


def _n_blocks(stride: int) -> int:
    n = int(round(np.log2(stride)))
    if stride < 4 or 2 ** n != stride:
        raise ValueError(f"encoder stride must be a power of two >= 4, got {stride}")
    return n


def _check_extent(h: int, w: int, stride: int) -> None:
    if h % stride or w % stride:
        raise ValueError(f"frame extent {h}x{w} is not divisible by stride {stride}")


def _trunk(x: Tensor, params: ParamSet, stride: int) -> tuple[Tensor, Tensor]:
    skip = None
    for i in range(_n_blocks(stride)):
        x = relu(ops.conv2d(x, params[f"block{i}.w"], params[f"block{i}.b"], stride=2, pad=1))
        if i == 0:
            skip = x
    return x, skip


def encode_query(frame: Tensor, params: ParamSet, stride: int = 4) -> QueryFeatures:
    """Query key ``[H, W, Ck]`` and value ``[H, W, Cv]`` at ``H = H0 / stride``."""
    _check_extent(frame.shape[0], frame.shape[1], stride)
    f, skip = _trunk(frame, params, stride)
    key = ops.conv2d(f, params["key.w"], params["key.b"])
    value = ops.conv2d(f, params["value.w"], params["value.b"])
    return QueryFeatures(key, value, skip)


def encode_memory(frame: Tensor, mask: Tensor, params: ParamSet, stride: int = 4) -> tuple[Tensor, Tensor]:
    """Memory key/value from the frame with one object's mask as a fourth channel."""
    if mask.ndim == 2:
        mask = mask.reshape(mask.shape + (1,))
    if mask.shape[:2] != frame.shape[:2] or mask.shape[2] != 1:
        raise ValueError(f"mask {mask.shape} does not match frame {frame.shape}")
    _check_extent(frame.shape[0], frame.shape[1], stride)
    f, _ = _trunk(concat([frame, mask], axis=2), params, stride)
    return ops.conv2d(f, params["key.w"], params["key.b"]), ops.conv2d(f, params["value.w"], params["value.b"])


def decode(f_pro: Tensor, skip2: Tensor | None, params: ParamSet, stride: int = 4) -> Tensor:
    """Upsample by 2 until stride 1 (conv3x3-ReLU per stage), then a 1x1 logit head.

    The stride-2 skip map is concatenated at the stage that reaches stride 2.
    """
    x = f_pro
    n = _n_blocks(stride)
    for i in range(n):
        x = ops.upsample2x(x)
        if i == n - 2 and skip2 is not None:
            x = concat([x, skip2], axis=2)
        x = relu(ops.conv2d(x, params[f"stage{i}.w"], params[f"stage{i}.b"]))
    return ops.conv2d(x, params["logit.w"], params["logit.b"])


def soft_aggregate(logits: list) -> Tensor:
    """Per-object logits ``[H0, W0, 1]`` to normalized log-probabilities ``[H0, W0, N+1]``.

    Channel 0 is background with unnormalized probability ``prod(1 - p_i)``.
    """
    log_bg = log_sigmoid(neg(logits[0]))
    for lg in logits[1:]:
        log_bg = log_bg + log_sigmoid(neg(lg))
    return log_softmax(concat([log_bg] + [log_sigmoid(lg) for lg in logits], axis=2), axis=2)


def probabilities(log_probs: Tensor) -> Tensor:
    return exp(log_probs)


def cross_entropy(log_probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean per-pixel negative log-likelihood of integer ``labels [H0, W0]``."""
    n_cls = log_probs.shape[-1]
    onehot = np.eye(n_cls, dtype=log_probs.dtype)[labels]
    picked = tsum(log_probs * Tensor(onehot))
    return picked * (-1.0 / labels.size)


def init_encoder(params: ParamSet, prefix: str, rng, cin: int, width: int, ck: int, cv: int,
                 stride: int = 4) -> None:
    c = cin
    for i in range(_n_blocks(stride)):
        cout = width * 2 ** i
        ops.init_conv(params, f"{prefix}.block{i}", rng, 3, c, cout)
        c = cout
    ops.init_conv(params, f"{prefix}.key", rng, 1, c, ck)
    ops.init_conv(params, f"{prefix}.value", rng, 1, c, cv)


def init_decoder(params: ParamSet, prefix: str, rng, cv: int, skip_ch: int, width: int,
                 stride: int = 4) -> None:
    n = _n_blocks(stride)
    c = cv
    for i in range(n):
        cin = c + (skip_ch if i == n - 2 else 0)
        ops.init_conv(params, f"{prefix}.stage{i}", rng, 3, cin, width)
        c = width
    ops.init_conv(params, f"{prefix}.logit", rng, 1, c, 1)
