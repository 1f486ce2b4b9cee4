import numpy as np
import pytest

from srnet.memory import MemoryBank
from srnet.tensor import Tensor


def _frame(i, hw=(3, 2), ck=2, cv=3):
    k = Tensor(np.full(hw + (ck,), float(i)))
    v = Tensor(np.full(hw + (cv,), 10.0 + i))
    return k, v


def test_empty_bank_views_absent():
    bank = MemoryBank()
    assert bank.local_view() is None
    assert bank.global_view() is None


def test_first_append_is_local_only():
    bank = MemoryBank()
    bank.append(*_frame(0))
    assert bank.global_view() is None
    k, v = bank.local_view()
    assert k.data[0, 0, 0] == 0.0


def test_two_appends():
    bank = MemoryBank()
    bank.append(*_frame(0)).append(*_frame(1))
    kg, vg = bank.global_view()
    assert kg.shape == (1, 3, 2, 2)
    assert kg.data[0, 0, 0, 0] == 0.0
    assert bank.local_view()[0].data[0, 0, 0] == 1.0


def test_three_frames_global_count():
    bank = MemoryBank()
    for i in range(3):
        bank.append(*_frame(i))
    assert bank.global_view()[0].shape[0] == 2


def test_eviction_keeps_frame_zero():
    # simulate the policy by hand: frame 0 pinned, ring over the rest
    n, cap = 6, 5
    bank = MemoryBank(capacity=cap)
    expected = []
    for i in range(n):
        bank.append(*_frame(i))
        expected.append(i)
        if len(expected) > cap:
            expected.pop(1)
    assert bank.frame_ids == expected == [0, 2, 3, 4, 5]
    assert len(bank) == cap


def test_capacity_bound_over_long_run():
    bank = MemoryBank(capacity=4)
    for i in range(20):
        bank.append(*_frame(i))
        assert len(bank) <= 4
        assert bank.frame_ids[0] == 0
        assert bank.local_frame_id() == i
    assert bank.global_frame_ids() == [0, 17, 18]


def test_roundtrip_views_are_bitwise():
    rng = np.random.default_rng(0)
    items = [(Tensor(rng.standard_normal((2, 2, 3))), Tensor(rng.standard_normal((2, 2, 4)))) for _ in range(4)]
    bank = MemoryBank(capacity=8)
    for k, v in items:
        bank.append(k, v)
    kg, vg = bank.global_view()
    for i in range(3):
        assert kg.data[i].tobytes() == items[i][0].data.tobytes()
        assert vg.data[i].tobytes() == items[i][1].data.tobytes()
    assert bank.local_view()[1].data.tobytes() == items[3][1].data.tobytes()


def test_shape_mismatch_rejected():
    bank = MemoryBank()
    bank.append(*_frame(0))
    with pytest.raises(ValueError):
        bank.append(*_frame(1, hw=(2, 2)))
    with pytest.raises(ValueError):
        bank.append(*_frame(1, cv=5))


def test_capacity_below_two_rejected():
    with pytest.raises(ValueError):
        MemoryBank(capacity=1)


def test_dump_restore(tmp_path):
    rng = np.random.default_rng(3)
    bank = MemoryBank(capacity=3)
    for _ in range(5):
        bank.append(Tensor(rng.standard_normal((2, 3, 2)).astype(np.float32)),
                    Tensor(rng.standard_normal((2, 3, 4)).astype(np.float32)))
    bank.dump(str(tmp_path))
    index = (tmp_path / "index.txt").read_text().splitlines()
    assert index[1:] == [f"{i} key_{i:05d}.srtn value_{i:05d}.srtn" for i in (0, 3, 4)]
    back = MemoryBank.restore(str(tmp_path))
    assert back.capacity == 3 and back.frame_ids == [0, 3, 4]
    for a, b in zip(bank.values, back.values):
        assert a.data.tobytes() == b.data.tobytes()
