from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from sportcal import _backend, _kernels_py
from sportcal.camera import CameraPose
from sportcal.lk import image_gradients, to_normalized
from sportcal.render import project_template

compiled = pytest.importorskip("sportcal._kernels", reason="compiled extension not built")


def test_compiled_backend_selected_by_default():
    if os.environ.get("SPORTCAL_PURE_PYTHON"):
        assert _backend.NAME == "python"
    else:
        assert _backend.NAME == "cython"


def test_env_forces_fallback():
    out = subprocess.run(
        [sys.executable, "-c", "import sportcal; print(sportcal.BACKEND)"],
        env={**os.environ, "SPORTCAL_PURE_PYTHON": "1"}, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_squared_edt_equivalent(rng):
    for shape, density in [((64, 64), 0.01), ((37, 101), 0.2), ((1, 50), 0.1), ((50, 1), 0.1)]:
        sites = np.ascontiguousarray(rng.random(shape) < density, dtype=np.uint8)
        np.testing.assert_array_equal(compiled.squared_edt(sites), _kernels_py.squared_edt(sites))
    empty = np.zeros((5, 6), np.uint8)
    np.testing.assert_array_equal(compiled.squared_edt(empty), _kernels_py.squared_edt(empty))


def test_draw_segments_equivalent(soccer, rng):
    for pose in [CameraPose(2000, 8, -10), CameraPose(1200, -30, -6, center=(50, -30, 10))]:
        segs = np.ascontiguousarray(project_template(soccer, pose))
        for radius in (0.5, 2.0, 3.5):
            a = np.zeros((720, 1280), np.uint8)
            b = np.zeros((720, 1280), np.uint8)
            compiled.draw_segments(a, segs, radius)
            _kernels_py.draw_segments(b, segs, radius)
            assert np.array_equal(a, b)
    wild = np.ascontiguousarray(rng.uniform(-5000, 5000, (200, 4)))
    a = np.zeros((90, 160), np.uint8)
    b = np.zeros((90, 160), np.uint8)
    compiled.draw_segments(a, wild, 1.5)
    _kernels_py.draw_segments(b, wild, 1.5)
    assert np.array_equal(a, b)


def test_lk_accumulate_equivalent(rng):
    ref = np.ascontiguousarray(rng.random((60, 80)) * 20, dtype=np.float32)
    query = np.ascontiguousarray(np.roll(ref, 2, axis=1))
    gx, gy = (np.ascontiguousarray(g, dtype=np.float32) for g in image_gradients(query))
    warp = np.array([[1.0, 0.01, 1.5], [-0.005, 1.0, -0.7], [1e-5, 0.0, 1.0]])
    hn = np.ascontiguousarray(to_normalized(warp, 80, 60))
    for jac in (True, False):
        for border in (0.0, 5.0):
            a = compiled.lk_accumulate(ref, query, gx, gy, hn, jac, border)
            b = _kernels_py.lk_accumulate(ref, query, gx, gy, hn, jac, border)
            for x, y in zip(a, b):
                np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-9)
