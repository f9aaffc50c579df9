import math

import numpy as np
import pytest

from ivusseg.errors import EmptyRegionError, ValidationError
from ivusseg.geometry import extract_contour
from ivusseg.metrics import (REFERENCE_ROWS, SliceMetrics, evaluate_dataset, hausdorff, jaccard,
                             summarize)

from conftest import disk
from oracles import border_pixels, hausdorff_full_matrix, jaccard_sets


def square(shape, top, left, side):
    m = np.zeros(shape, bool)
    m[top:top + side, left:left + side] = True
    return m


def test_jaccard_examples():
    a = np.zeros((4, 4), bool)
    b = np.zeros((4, 4), bool)
    a[0, 0:2] = True
    b[0, 1:3] = True
    assert jaccard(a, b) == pytest.approx(1 / 3)
    assert jaccard(a, a) == 1.0
    assert jaccard(a, ~a) == 0.0
    assert jaccard(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0


def test_jaccard_shape_mismatch():
    with pytest.raises(ValidationError):
        jaccard(np.zeros((3, 3)), np.zeros((4, 4)))


def test_hausdorff_single_point_offset():
    assert hausdorff([[0, 0]], [[0, 5]], ps=0.1) == pytest.approx(0.5)


def test_hausdorff_nested_squares():
    outer = square((12, 12), 2, 2, 7)
    inner = square((12, 12), 4, 4, 3)
    hd = hausdorff(extract_contour(outer), extract_contour(inner), 1.0)
    assert hd == pytest.approx(2 * math.sqrt(2), abs=1e-12)


def test_hausdorff_identity_and_empty():
    c = extract_contour(disk((32, 32), (16, 16), 8))
    assert hausdorff(c, c, 0.5) == 0.0
    with pytest.raises(EmptyRegionError):
        hausdorff(np.zeros((0, 2)), c)


def test_against_oracles(rng):
    for _ in range(200):
        a = rng.random((16, 16)) > rng.uniform(0.3, 0.9)
        b = rng.random((16, 16)) > rng.uniform(0.3, 0.9)
        assert jaccard(a, b) == pytest.approx(jaccard_sets(a, b), abs=1e-15)
        if not a.any() or not b.any():
            continue
        ca, cb = extract_contour(a), extract_contour(b)
        assert {tuple(p) for p in ca.points} == set(border_pixels(a))
        ps = float(rng.uniform(0.01, 0.1))
        expect = hausdorff_full_matrix(border_pixels(a), border_pixels(b), ps)
        assert hausdorff(ca, cb, ps) == pytest.approx(expect, rel=1e-12)


def test_hausdorff_symmetry_and_linearity(rng):
    for _ in range(20):
        a = rng.integers(0, 50, (int(rng.integers(1, 30)), 2))
        b = rng.integers(0, 50, (int(rng.integers(1, 30)), 2))
        assert hausdorff(a, b) == hausdorff(b, a)
        assert hausdorff(a, b, 0.37) == pytest.approx(0.37 * hausdorff(a, b), rel=1e-15)


def test_evaluate_dataset_perfect():
    truth = np.stack([np.stack([disk((32, 32), (16, 16), 5), disk((32, 32), (16, 16), 10)])] * 3)
    metrics, summary = evaluate_dataset(truth.astype(float), truth, 0.02, ["a", "b", "c"])
    assert len(metrics) == 6
    for s in summary:
        assert s.n == 3 and s.jm_mean == 1.0 and s.jm_sd == 0.0
        assert s.hd_mean == 0.0 and s.hd_excluded == 0


def test_summary_two_point_sd():
    rows = [SliceMetrics("a", "lumen", 0.9, 0.1), SliceMetrics("b", "lumen", 1.0, 0.2)]
    s = summarize(rows, ("lumen",))[0]
    assert s.jm_mean == pytest.approx(0.95)
    assert s.jm_sd == pytest.approx(0.0707, abs=1e-4)
    assert s.hd_mean == pytest.approx(0.15)


def test_empty_prediction_excluded_from_hd():
    truth = np.zeros((1, 2, 16, 16), bool)
    truth[0, :, 4:10, 4:10] = True
    pred = np.zeros((1, 2, 16, 16))
    pred[0, 1] = truth[0, 1]
    metrics, summary = evaluate_dataset(pred, truth, 0.1, threshold=0.5)
    assert metrics[0].jm == 0.0 and metrics[0].hd_mm is None
    assert summary[0].hd_excluded == 1 and math.isnan(summary[0].hd_mean)
    assert summary[1].hd_excluded == 0


def test_evaluate_shape_errors():
    with pytest.raises(ValidationError):
        evaluate_dataset(np.zeros((1, 2, 8, 8)), np.zeros((1, 2, 9, 9), bool), 0.1)
    with pytest.raises(ValidationError):
        evaluate_dataset(np.zeros((1, 3, 8, 8)), np.zeros((1, 3, 8, 8), bool), 0.1)


def test_reference_rows():
    assert REFERENCE_ROWS["lumen"] == {"jm_mean": 0.9412, "jm_sd": 0.0307,
                                       "hd_mean": 0.0639, "hd_sd": 0.0436}
    assert REFERENCE_ROWS["ma"] == {"jm_mean": 0.9509, "jm_sd": 0.0251,
                                    "hd_mean": 0.0867, "hd_sd": 0.0622}
