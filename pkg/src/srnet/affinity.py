"""Space-time memory read between a query key map and the global memory block."""

from __future__ import annotations

from .tensor import Tensor, reshape, softmax, tsum


def _flatten_keys(k: Tensor) -> Tensor:
    return reshape(k, (-1, k.shape[-1]))


def similarity(mem_keys: Tensor, query_key: Tensor) -> Tensor:
    """Negative squared L2 distance between every memory and query pixel.

    ``mem_keys`` is ``[T-1, H, W, Ck]`` (or any ``[..., Ck]``), ``query_key``
    is ``[H, W, Ck]``. Returns ``[(T-1)HW, HW]`` with memory pixels on rows.
    """
    if mem_keys.shape[-1] != query_key.shape[-1]:
        raise ValueError(
            f"key channels differ: memory {mem_keys.shape[-1]} vs query {query_key.shape[-1]}")
    km = _flatten_keys(mem_keys)
    kq = _flatten_keys(query_key)
    cross = km @ kq.T
    mm = tsum(km * km, axis=1, keepdims=True)
    qq = tsum(kq * kq, axis=1, keepdims=True)
    return 2.0 * cross - mm - qq.T


def affinity(mem_keys: Tensor, query_key: Tensor) -> Tensor:
    """Column-wise softmax of :func:`similarity` over the memory pixels."""
    return softmax(similarity(mem_keys, query_key), axis=0)


def readout(weights: Tensor, mem_values: Tensor, query_hw: tuple | None = None) -> Tensor:
    """``F_mem[j] = sum_i W[i, j] v[i]`` reshaped to ``[H, W, Cv]``.

    The query extent defaults to the memory frames' own ``H x W``.
    """
    vm = reshape(mem_values, (-1, mem_values.shape[-1]))
    if weights.shape[0] != vm.shape[0]:
        raise ValueError(f"affinity has {weights.shape[0]} memory rows, values have {vm.shape[0]}")
    if query_hw is None:
        query_hw = mem_values.shape[-3:-1]
    out = weights.T @ vm
    return reshape(out, (query_hw[0], query_hw[1], vm.shape[-1]))


def memory_read(mem_keys: Tensor, mem_values: Tensor, query_key: Tensor) -> Tensor:
    return readout(affinity(mem_keys, query_key), mem_values, query_key.shape[:2])
