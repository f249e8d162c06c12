from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial import cKDTree

from sportcal.distance import (distance_transform, load_distance_dump, save_distance_dump,
                               scaled_truncation)


def brute_force(sites: np.ndarray, trunc: float) -> np.ndarray:
    """Distance from every pixel to every edge pixel, keep the minimum."""
    h, w = sites.shape
    ys, xs = np.nonzero(sites)
    if len(xs) == 0:
        return np.full((h, w), trunc)
    gy, gx = np.mgrid[0:h, 0:w]
    d2 = (gx[..., None] - xs) ** 2 + (gy[..., None] - ys) ** 2
    return np.minimum(np.sqrt(d2.min(-1)), trunc)


def test_three_four_five():
    img = np.zeros((40, 40), np.uint8)
    img[10, 10] = 255
    d = distance_transform(img, 40.0)
    assert d[14, 13] == 5.0 and d[13, 14] == 5.0
    assert d.dtype == np.float32


def test_all_edges_and_no_edges():
    assert not distance_transform(np.full((8, 9), 255, np.uint8)).any()
    assert np.all(distance_transform(np.zeros((8, 9), np.uint8), 12.5) == 12.5)


@pytest.mark.parametrize("density", [0.001, 0.01, 0.1, 0.5])
def test_brute_force_oracle(rng, density):
    for _ in range(5):
        img = ((rng.random((64, 64)) < density) * 255).astype(np.uint8)
        np.testing.assert_allclose(distance_transform(img, 40.0), brute_force(img, 40.0), atol=1e-4)


def test_nonsquare_against_kdtree(rng):
    img = ((rng.random((90, 160)) < 0.002) * 255).astype(np.uint8)
    img[0, 0] = 255
    ys, xs = np.nonzero(img)
    gy, gx = np.mgrid[0:90, 0:160]
    d, _ = cKDTree(np.c_[xs, ys]).query(np.c_[gx.ravel(), gy.ravel()])
    np.testing.assert_allclose(distance_transform(img, 1e6).ravel(), d, atol=1e-4)


edge_images = arrays(np.uint8, st.tuples(st.integers(1, 24), st.integers(1, 24)),
                     elements=st.sampled_from([0, 0, 0, 0, 255]))


@given(edge_images, st.floats(0.5, 50))
def test_properties(img, trunc):
    d = distance_transform(img, trunc).astype(np.float64)
    assert np.all((d >= 0) & (d <= np.float32(trunc)))
    assert np.all(d[img != 0] == 0)
    # 1-Lipschitz over 4- and 8-neighbours
    tol = 1e-5
    assert np.all(np.abs(np.diff(d, axis=0)) <= 1 + tol)
    assert np.all(np.abs(np.diff(d, axis=1)) <= 1 + tol)
    assert np.all(np.abs(d[1:, 1:] - d[:-1, :-1]) <= np.sqrt(2) + tol)
    # truncation idempotence
    assert np.array_equal(np.minimum(d, np.float32(trunc)), d)


@given(edge_images, st.integers(0, 2**31))
def test_monotone_in_edges(img, seed):
    more = img.copy()
    r = np.random.default_rng(seed)
    more[r.random(img.shape) < 0.1] = 255
    assert np.all(distance_transform(more, 30) <= distance_transform(img, 30))


def test_rejects_bad_truncation():
    with pytest.raises(ValueError):
        distance_transform(np.zeros((3, 3), np.uint8), 0)


def test_scaled_truncation():
    assert scaled_truncation(1280) == 40.0
    assert scaled_truncation(640) == 20.0
    assert scaled_truncation(320, 30) == 7.5


def test_dump_round_trip(tmp_path, rng):
    d = rng.random((7, 11)).astype(np.float32)
    p = tmp_path / "d.dist"
    save_distance_dump(p, d, 40.0)
    data = p.read_bytes()
    assert data[:4] == b"DIST" and len(data) == 16 + 4 * 77
    back, trunc = load_distance_dump(p)
    assert np.array_equal(back, d) and trunc == 40.0
    p.write_bytes(data[:-4])
    with pytest.raises(ValueError):
        load_distance_dump(p)
