"""DAVIS-style region (J) and boundary (F) scores.

Boundaries are foreground pixels with at least one 4-neighbour outside the
mask (off-image counts as outside). A boundary pixel is matched when a
boundary pixel of the other mask lies within ``tol`` pixels (Euclidean).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

DEFAULT_BOUND_TH = 0.008


def _binary_pair(pred, gt):
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask extents differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def jaccard(pred, gt) -> float:
    """``|pred ∩ gt| / |pred ∪ gt|``; 1 when both masks are empty."""
    pred, gt = _binary_pair(pred, gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def boundary(mask) -> np.ndarray:
    m = np.asarray(mask).astype(bool)
    p = np.pad(m, 1)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m & ~interior


def default_tolerance(shape) -> float:
    return float(math.ceil(DEFAULT_BOUND_TH * math.hypot(shape[0], shape[1])))


def _matched_fraction(src: np.ndarray, dst: np.ndarray, tol: float) -> float:
    dist = distance_transform_edt(~dst)
    return float(np.count_nonzero(dist[src] <= tol + 1e-9)) / np.count_nonzero(src)


def contour_f(pred, gt, tol: float | None = None) -> float:
    """Boundary F-measure ``2PR / (P + R)``."""
    pred, gt = _binary_pair(pred, gt)
    if tol is None:
        tol = default_tolerance(pred.shape)
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    pb, gb = boundary(pred), boundary(gt)
    if not pb.any() and not gb.any():
        return 1.0
    if not pb.any() or not gb.any():
        return 0.0
    precision = _matched_fraction(pb, gb, tol)
    recall = _matched_fraction(gb, pb, tol)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class EvalRow:
    sequence: str
    object: int
    J: float
    F: float

    @property
    def JF(self) -> float:
        return (self.J + self.F) / 2


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def add(self, sequence: str, obj: int, J: float, F: float) -> None:
        self.rows.append(EvalRow(sequence, obj, float(J), float(F)))

    @property
    def J(self) -> float:
        return float(np.mean([r.J for r in self.rows]))

    @property
    def F(self) -> float:
        return float(np.mean([r.F for r in self.rows]))

    @property
    def JF(self) -> float:
        return (self.J + self.F) / 2

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sequence", "object", "J", "F", "JF"])
            for r in self.rows:
                w.writerow([r.sequence, r.object, f"{r.J:.6f}", f"{r.F:.6f}", f"{r.JF:.6f}"])

    @classmethod
    def from_csv(cls, path: str) -> "EvalReport":
        rep = cls()
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rep.add(rec["sequence"], int(rec["object"]), float(rec["J"]), float(rec["F"]))
        return rep

    def summary(self) -> str:
        lines = [f"{r.sequence:>16s}  obj {r.object:2d}  J {r.J:.4f}  F {r.F:.4f}  J&F {r.JF:.4f}"
                 for r in self.rows]
        if self.rows:
            lines.append(f"{'mean':>16s}          J {self.J:.4f}  F {self.F:.4f}  J&F {self.JF:.4f}")
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def score_sequence(pred_labels, gt_labels, n_objects: int | None = None,
                   skip_first: bool = True, tol: float | None = None) -> dict:
    """Mean J and F per object id over the frames of one sequence.

    ``pred_labels``/``gt_labels`` are ``[T, H, W]`` label maps. Frame 0 is
    excluded by default since it is given.
    """
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ValueError(f"prediction {pred_labels.shape} and ground truth {gt_labels.shape} differ")
    if n_objects is None:
        n_objects = int(gt_labels[0].max())
    frames = range(1 if skip_first and len(gt_labels) > 1 else 0, len(gt_labels))
    out = {}
    for obj in range(1, n_objects + 1):
        js = [jaccard(pred_labels[t] == obj, gt_labels[t] == obj) for t in frames]
        fs = [contour_f(pred_labels[t] == obj, gt_labels[t] == obj, tol) for t in frames]
        out[obj] = (float(np.mean(js)), float(np.mean(fs)))
    return out


@dataclass
class Aggregate:
    G: float
    J_seen: float | None
    F_seen: float | None
    J_unseen: float | None
    F_unseen: float | None
    warnings: list


def aggregate(report: EvalReport, seen_ids, unseen_ids) -> Aggregate:
    """``G = mean(J_s, F_s, J_u, F_u)``; an empty split drops its two terms with a warning."""
    seen_ids, unseen_ids = set(seen_ids), set(unseen_ids)
    if seen_ids & unseen_ids:
        raise ValueError("seen and unseen ids overlap")
    warnings = []
    terms = {}
    for tag, ids in (("seen", seen_ids), ("unseen", unseen_ids)):
        rows = [r for r in report.rows if r.sequence in ids]
        if not rows:
            warnings.append(f"{tag} partition is empty; its terms are omitted")
            terms[tag] = (None, None)
            continue
        terms[tag] = (float(np.mean([r.J for r in rows])), float(np.mean([r.F for r in rows])))
    vals = [v for pair in terms.values() for v in pair if v is not None]
    if not vals:
        raise ValueError("both partitions are empty")
    report.warnings.extend(warnings)
    return Aggregate(float(np.mean(vals)), *terms["seen"], *terms["unseen"], warnings)
