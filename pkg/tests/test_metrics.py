import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import boundary_loops, contour_f_exhaustive
from srnet.metrics import (EvalReport, aggregate, boundary, contour_f, default_tolerance, jaccard,
                           score_sequence)


def _rect(shape, r0, r1, c0, c1):
    m = np.zeros(shape, bool)
    m[r0:r1, c0:c1] = True
    return m


def test_jaccard_trivial_cases():
    m = _rect((6, 6), 1, 4, 1, 4)
    assert jaccard(m, m) == 1.0
    assert jaccard(m, _rect((6, 6), 4, 6, 4, 6)) == 0.0
    assert jaccard(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0


def test_jaccard_one_third():
    a = _rect((1, 3), 0, 1, 0, 2)
    b = _rect((1, 3), 0, 1, 1, 3)
    assert jaccard(a, b) == pytest.approx(1 / 3)


def test_extent_mismatch_rejected():
    with pytest.raises(ValueError):
        jaccard(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        contour_f(np.zeros((2, 2)), np.zeros((3, 2)))


def test_boundary_matches_loops():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = rng.uniform(size=(7, 9)) > 0.5
        np.testing.assert_array_equal(boundary(m), boundary_loops(m))


def test_default_tolerance_64():
    assert default_tolerance((64, 64)) == math.ceil(0.008 * math.hypot(64, 64)) == 1


def test_contour_trivial_cases():
    m = _rect((10, 10), 2, 6, 3, 8)
    assert contour_f(m, m) == 1.0
    assert contour_f(np.zeros((10, 10)), m) == 0.0
    assert contour_f(np.zeros((10, 10)), np.zeros((10, 10))) == 1.0


def test_shift_by_one_pixel():
    gt = _rect((16, 16), 4, 10, 4, 10)
    pred = _rect((16, 16), 4, 10, 5, 11)
    assert contour_f(pred, gt, tol=1) == 1.0
    strict = contour_f(pred, gt, tol=0)
    assert strict < 1.0
    assert strict == pytest.approx(contour_f_exhaustive(pred, gt, 0), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([0, 1, 1.5, 2, 3]))
def test_contour_matches_exhaustive_oracle(seed, tol):
    rng = np.random.default_rng(seed)
    gt = _rect((12, 12), *sorted(rng.integers(0, 13, 2)), *sorted(rng.integers(0, 13, 2)))
    pred = gt ^ (rng.uniform(size=(12, 12)) < 0.1)
    assert contour_f(pred, gt, tol) == pytest.approx(contour_f_exhaustive(pred, gt, tol), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_symmetry_and_range(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(10, 10)) > 0.6, rng.uniform(size=(10, 10)) > 0.4
    assert jaccard(a, b) == jaccard(b, a)
    assert contour_f(a, b, 1) == pytest.approx(contour_f(b, a, 1), abs=1e-12)
    assert 0 <= jaccard(a, b) <= 1 and 0 <= contour_f(a, b) <= 1


def test_growing_subset_chain_is_monotone():
    gt = _rect((12, 12), 2, 10, 2, 10)
    scores = []
    for k in range(1, 9):
        scores.append(jaccard(_rect((12, 12), 2, 2 + k, 2, 10), gt))
    assert scores == sorted(scores)


def test_score_sequence_skips_first_frame():
    gt = np.zeros((3, 8, 8), int)
    gt[:, 2:5, 2:5] = 1
    pred = gt.copy()
    pred[0] = 0  # frame 0 is never scored
    assert score_sequence(pred, gt) == {1: (1.0, 1.0)}
    pred[2] = 0
    j, f = score_sequence(pred, gt)[1]
    assert j == 0.5 and f == 0.5


def test_report_csv_roundtrip(tmp_path):
    rep = EvalReport()
    rep.add("a", 1, 0.5, 0.75)
    rep.add("b", 1, 1.0, 0.25)
    path = tmp_path / "r.csv"
    rep.to_csv(str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "sequence,object,J,F,JF"
    back = EvalReport.from_csv(str(path))
    assert back.J == 0.75 and back.F == 0.5 and back.JF == 0.625
    assert all(r.JF == (r.J + r.F) / 2 for r in back.rows)


def test_aggregate_cases():
    rep = EvalReport()
    for name, j, f in (("s1", 0.8, 0.6), ("s2", 0.6, 0.4), ("u1", 0.9, 0.7), ("u2", 0.5, 0.3)):
        rep.add(name, 1, j, f)
    agg = aggregate(rep, ["s1", "s2"], ["u1", "u2"])
    # seen J 0.7, F 0.5; unseen J 0.7, F 0.5
    assert agg.G == pytest.approx((0.7 + 0.5 + 0.7 + 0.5) / 4) and not agg.warnings

    single = aggregate(rep, ["s1", "s2", "u1", "u2"], [])
    assert single.G == pytest.approx(rep.JF) and single.warnings

    eq = EvalReport()
    eq.add("x", 1, 0.6, 0.6)
    eq.add("y", 1, 0.6, 0.6)
    assert aggregate(eq, ["x"], ["y"]).G == pytest.approx(0.6)
    with pytest.raises(ValueError):
        aggregate(eq, ["x"], ["x"])
