import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivusseg.errors import DegenerateInputError
from ivusseg.postproc import (binarize, count_components, largest_component, otsu_threshold,
                              postprocess)

from conftest import disk
from oracles import otsu_bruteforce


def test_otsu_two_values_separates_them():
    values = np.array([0.1] * 50 + [0.9] * 50)
    t = otsu_threshold(values)
    assert 0.1 < t <= 0.9
    b = binarize(values, t)
    assert b.sum() == 50 and b[50:].all()


def test_otsu_constant_map_is_degenerate():
    with pytest.raises(DegenerateInputError):
        otsu_threshold(np.full((8, 8), 0.3))
    with pytest.raises(DegenerateInputError):
        otsu_threshold(np.array([]))


def test_otsu_two_clusters(rng):
    values = np.concatenate([rng.normal(0.2, 0.1, 1000), rng.normal(0.8, 0.1, 1000)]).clip(0, 1)
    t = otsu_threshold(values)
    assert 0.35 < t < 0.65
    assert t == otsu_bruteforce(values)


def test_otsu_separated_clusters_tie_to_lowest_gap_boundary():
    # with an empty gap the criterion is flat across it; the lowest boundary wins
    values = np.array([0.1] * 10 + [0.2] * 10 + [0.8] * 10 + [0.9] * 10)
    assert otsu_threshold(values) == (int(0.2 * 256) + 1) / 256


def test_otsu_matches_bruteforce(rng):
    for i in range(100):
        n = int(rng.integers(2, 60))
        if i % 3 == 0:
            values = rng.random(n)
        elif i % 3 == 1:
            values = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], n)
        else:
            values = rng.beta(0.5, 0.5, n)
        expect = otsu_bruteforce(values)
        if expect is None:
            with pytest.raises(DegenerateInputError):
                otsu_threshold(values)
        else:
            assert otsu_threshold(values) == expect


def test_binarize_is_strict():
    np.testing.assert_array_equal(binarize(np.array([0.49, 0.5, 0.51]), 0.5), [False, False, True])


def test_largest_component_keeps_bigger():
    m = np.zeros((10, 10), bool)
    m[0, :5] = True
    m[8, 6:9] = True
    out = largest_component(m)
    assert out.sum() == 5 and out[0, :5].all()


def test_largest_component_single_unchanged():
    m = disk((20, 20), (10, 10), 5)
    np.testing.assert_array_equal(largest_component(m), m)
    assert not largest_component(np.zeros((5, 5), bool)).any()


def test_largest_component_tie_uses_raster_order():
    m = np.zeros((10, 10), bool)
    m[7, 1:4] = True
    m[2, 5:8] = True
    out = largest_component(m)
    assert out[2, 5:8].all() and not out[7].any()


def test_diagonal_pixels_are_connected():
    m = np.eye(6, dtype=bool)
    assert count_components(m) == 1
    np.testing.assert_array_equal(largest_component(m), m)


def test_postprocess_recovers_clean_disk():
    truth = disk((64, 64), (32, 32), 15)
    prob = np.where(truth, 0.9, 0.1)
    np.testing.assert_array_equal(postprocess(prob), truth)


def test_postprocess_removes_specks():
    truth = disk((64, 64), (30, 30), 12)
    prob = np.where(truth, 0.85, 0.05)
    prob[2, 60] = prob[60, 3] = prob[50, 50] = 0.95
    out = postprocess(prob)
    np.testing.assert_array_equal(out, truth)
    assert count_components(out) == 1


def test_postprocess_constant_half_is_empty():
    assert not postprocess(np.full((16, 16), 0.5)).any()
    assert postprocess(np.full((16, 16), 0.7)).all()


def test_postprocess_explicit_threshold():
    prob = np.linspace(0, 1, 64).reshape(8, 8)
    assert postprocess(prob, threshold=0.5).sum() == 32


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_postprocess_single_region_and_idempotent(seed):
    r = np.random.default_rng(seed)
    prob = r.random((24, 24))
    out = postprocess(prob)
    assert count_components(out) <= 1
    np.testing.assert_array_equal(postprocess(out.astype(float)), out)
