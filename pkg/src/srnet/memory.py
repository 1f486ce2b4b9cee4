"""Per-object frame memory split into a local block and a global block."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .tensor import Tensor, stack


@dataclass
class MemoryBank:
    """Ordered store of ``(key, value)`` feature maps, one entry per frame.

    The most recent entry is the local block; everything before it is the
    global block. When ``capacity`` is exceeded the oldest entry after
    frame 0 is evicted; frame 0 (the annotated frame) is never dropped.
    """

    capacity: int = 8
    keys: list = field(default_factory=list)
    values: list = field(default_factory=list)
    frame_ids: list = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 2:
            raise ValueError("memory capacity must be at least 2 (frame 0 plus the local frame)")

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def key_shape(self):
        return self.keys[0].shape if self.keys else None

    @property
    def value_shape(self):
        return self.values[0].shape if self.values else None

    def append(self, key: Tensor, value: Tensor, frame_id: int | None = None) -> "MemoryBank":
        """Add a frame in place and return the bank."""
        if key.ndim != 3 or value.ndim != 3:
            raise ValueError("memory key and value must be [H, W, C]")
        if key.shape[:2] != value.shape[:2]:
            raise ValueError(f"key {key.shape} and value {value.shape} disagree spatially")
        if self.keys and (key.shape != self.key_shape or value.shape != self.value_shape):
            raise ValueError(
                f"bank holds keys {self.key_shape} / values {self.value_shape}, "
                f"got {key.shape} / {value.shape}")
        if frame_id is None:
            frame_id = self.frame_ids[-1] + 1 if self.frame_ids else 0
        self.keys.append(key)
        self.values.append(value)
        self.frame_ids.append(frame_id)
        if len(self.keys) > self.capacity:
            # ring over frames 1..t-1; index 0 stays pinned
            del self.keys[1], self.values[1], self.frame_ids[1]
        return self

    def local_view(self):
        """``(k^L, v^L)`` of the most recent frame, or ``None`` for an empty bank."""
        if not self.keys:
            return None
        return self.keys[-1], self.values[-1]

    def global_view(self):
        """Stacked ``(k^G [T-1, H, W, Ck], v^G [T-1, H, W, Cv])`` or ``None`` if fewer than two frames."""
        if len(self.keys) < 2:
            return None
        return stack(self.keys[:-1], axis=0), stack(self.values[:-1], axis=0)

    def global_frame_ids(self) -> list:
        return self.frame_ids[:-1]

    def local_frame_id(self):
        return self.frame_ids[-1] if self.frame_ids else None

    def snapshot(self) -> "MemoryBank":
        return MemoryBank(self.capacity, list(self.keys), list(self.values), list(self.frame_ids))

    # -- persistence ----------------------------------------------------
    def dump(self, directory: str) -> None:
        """Write every entry as SRTN files plus an ``index.txt`` manifest."""
        from .io import write_srtn

        os.makedirs(directory, exist_ok=True)
        lines = [f"# capacity {self.capacity}"]
        for k, v, idx in zip(self.keys, self.values, self.frame_ids):
            kf, vf = f"key_{idx:05d}.srtn", f"value_{idx:05d}.srtn"
            write_srtn(os.path.join(directory, kf), k.data)
            write_srtn(os.path.join(directory, vf), v.data)
            lines.append(f"{idx} {kf} {vf}")
        with open(os.path.join(directory, "index.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def restore(cls, directory: str) -> "MemoryBank":
        from .io import read_srtn

        capacity = 8
        entries = []
        with open(os.path.join(directory, "index.txt")) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    parts = line[1:].split()
                    if len(parts) == 2 and parts[0] == "capacity":
                        capacity = int(parts[1])
                    continue
                idx, kf, vf = line.split()
                entries.append((int(idx), kf, vf))
        bank = cls(capacity=max(capacity, 2))
        for idx, kf, vf in entries:
            bank.keys.append(Tensor(read_srtn(os.path.join(directory, kf))))
            bank.values.append(Tensor(read_srtn(os.path.join(directory, vf))))
            bank.frame_ids.append(idx)
        return bank

