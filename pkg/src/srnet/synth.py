"""Synthetic moving-shape sequences with exact ground-truth label maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ObjectSpec:
    shape: str = "rectangle"  # or "disc"
    size: tuple = (16, 16)  # (h, w) for rectangles, (r,) for discs
    velocity: tuple = (0.0, 2.0)  # (dy, dx) pixels per frame
    start: tuple | None = None  # (y, x) top-left / centre; random when None
    color: tuple | None = None  # RGB in [0, 1]; random when None
    teleport_at: int | None = None  # frame index where the object jumps


@dataclass
class SequenceSpec:
    frames: int = 8
    height: int = 64
    width: int = 64
    objects: list = field(default_factory=lambda: [ObjectSpec()])
    occluder: tuple | None = None  # (y, x, h, w) static bar drawn above the objects
    noise: float = 0.03
    seed: int = 0

    @classmethod
    def from_kv(cls, kv: dict) -> "SequenceSpec":
        """Build from flat keys like ``frames``, ``object.0.shape``, ``object.0.velocity``."""
        kv = {k[5:] if k.startswith("spec.") else k: v for k, v in kv.items()}
        n_obj = int(kv.get("objects", 1))
        objs = []
        for i in range(n_obj):
            p = f"object.{i}."
            get = lambda key, default=None: kv.get(p + key, default)  # noqa: E731
            shape = get("shape", "rectangle")
            size = get("size", (16, 16) if shape == "rectangle" else (8,))
            size = tuple(size) if isinstance(size, tuple) else (size, size) if shape == "rectangle" else (size,)
            vel = get("velocity", (0.0, 2.0))
            start = get("start")
            color = get("color")
            tp = get("teleport_at")
            objs.append(ObjectSpec(shape, size, tuple(float(v) for v in vel),
                                   None if start is None else tuple(start),
                                   None if color is None else tuple(float(c) for c in color),
                                   None if tp is None else int(tp)))
        occ = kv.get("occluder")
        return cls(frames=int(kv.get("frames", 8)), height=int(kv.get("height", 64)),
                   width=int(kv.get("width", 64)), objects=objs,
                   occluder=None if occ is None else tuple(int(v) for v in occ),
                   noise=float(kv.get("noise", 0.03)), seed=int(kv.get("seed", 0)))

    def to_kv(self) -> dict:
        out = {"frames": self.frames, "height": self.height, "width": self.width,
               "objects": len(self.objects), "noise": self.noise, "seed": self.seed}
        if self.occluder is not None:
            out["occluder"] = self.occluder
        for i, o in enumerate(self.objects):
            p = f"object.{i}."
            out[p + "shape"] = o.shape
            out[p + "size"] = o.size
            out[p + "velocity"] = o.velocity
            if o.start is not None:
                out[p + "start"] = o.start
            if o.color is not None:
                out[p + "color"] = o.color
            if o.teleport_at is not None:
                out[p + "teleport_at"] = o.teleport_at
        return out


def _extent(o: ObjectSpec) -> tuple:
    if o.shape == "rectangle":
        return int(o.size[0]), int(o.size[1])
    if o.shape == "disc":
        d = 2 * int(o.size[0]) + 1
        return d, d
    raise ValueError(f"unknown object shape {o.shape!r}")


def _footprint(o: ObjectSpec, y: float, x: float, H: int, W: int) -> np.ndarray:
    rr, cc = np.mgrid[0:H, 0:W]
    if o.shape == "rectangle":
        h, w = _extent(o)
        y0, x0 = int(round(y)), int(round(x))
        return (rr >= y0) & (rr < y0 + h) & (cc >= x0) & (cc < x0 + w)
    r = int(o.size[0])
    cy, cx = round(y) + r, round(x) + r
    return (rr - cy) ** 2 + (cc - cx) ** 2 <= r * r


def _trajectory(o: ObjectSpec, T: int, H: int, W: int, rng: np.random.Generator) -> list:
    h, w = _extent(o)
    ymax, xmax = H - h, W - w
    if ymax < 0 or xmax < 0:
        raise ValueError("object does not fit in the frame")
    if o.start is None:
        y, x = float(rng.integers(0, ymax + 1)), float(rng.integers(0, xmax + 1))
    else:
        y, x = float(o.start[0]), float(o.start[1])
    vy, vx = o.velocity
    pos = []
    for t in range(T):
        if o.teleport_at is not None and t == o.teleport_at:
            # new position must not overlap the old one
            for _ in range(100):
                ny, nx = float(rng.integers(0, ymax + 1)), float(rng.integers(0, xmax + 1))
                if abs(ny - y) >= h or abs(nx - x) >= w:
                    break
            y, x = ny, nx
        pos.append((y, x))
        y, x = y + vy, x + vx
        if y < 0 or y > ymax:
            vy = -vy
            y = min(max(y, 0.0), float(ymax))
        if x < 0 or x > xmax:
            vx = -vx
            x = min(max(x, 0.0), float(xmax))
    return pos


def generate(spec: SequenceSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render ``frames float32[T, H, W, 3]`` in [0, 1] and ``labels int64[T, H, W]``.

    Same spec (and seed) gives bit-identical output.
    """
    rng = np.random.default_rng(spec.seed)
    T, H, W = spec.frames, spec.height, spec.width
    background = 0.35 + 0.15 * rng.random((H, W, 3))
    colors = []
    for o in spec.objects:
        colors.append(np.asarray(o.color) if o.color is not None else 0.55 + 0.45 * rng.random(3))
    trajs = [_trajectory(o, T, H, W, rng) for o in spec.objects]

    frames = np.empty((T, H, W, 3), dtype=np.float32)
    labels = np.zeros((T, H, W), dtype=np.int64)
    for t in range(T):
        img = background.copy()
        lab = np.zeros((H, W), dtype=np.int64)
        for i, (o, c) in enumerate(zip(spec.objects, colors), start=1):
            fp = _footprint(o, *trajs[i - 1][t], H, W)
            img[fp] = c
            lab[fp] = i
        if spec.occluder is not None:
            oy, ox, oh, ow = spec.occluder
            img[oy:oy + oh, ox:ox + ow] = 0.15
            lab[oy:oy + oh, ox:ox + ow] = 0
        img = img + spec.noise * rng.standard_normal((H, W, 3))
        frames[t] = np.clip(img, 0.0, 1.0)
        labels[t] = lab
    return frames, labels


def moving_rectangle(seed: int = 0, frames: int = 8, size: int = 64) -> SequenceSpec:
    return SequenceSpec(frames=frames, height=size, width=size,
                        objects=[ObjectSpec("rectangle", (16, 16), (1.0, 3.0), start=(12, 6))],
                        seed=seed)


def teleport_sequence(seed: int = 0, frames: int = 8, size: int = 64, at: int = 4) -> SequenceSpec:
    return SequenceSpec(frames=frames, height=size, width=size,
                        objects=[ObjectSpec("rectangle", (16, 16), (1.0, 2.0), teleport_at=at)],
                        seed=seed)
