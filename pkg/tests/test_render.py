from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial import cKDTree

from sportcal.camera import CameraPose, project_points, projection_from_pose
from sportcal.render import (EdgeImage, ImageFormatError, binarize, read_image, read_pgm,
                             render_edge_image, resize_to_feature_scale, write_image, write_pgm)
from sportcal.sampling import WORLD_CUP, sample_poses
from sportcal.template import FieldTemplate


def test_pose_facing_away_is_blank(soccer):
    img = render_edge_image(soccer, CameraPose(2000, 180, -10, center=(52.5, -45, 17)))
    assert img.edge_count() == 0


def test_empty_template_renders_blank():
    img = render_edge_image(FieldTemplate("blank", 10, 5), CameraPose(1000, 0, -10))
    assert not img.pixels.any()


@pytest.mark.parametrize("pan", [5.0, 17.0, 30.0])
def test_pan_mirror(soccer, pan):
    kw = dict(focal_length=1500, tilt_deg=-10, center=(52.5, -45, 17))
    a = render_edge_image(soccer, CameraPose(pan_deg=pan, **kw)).pixels
    b = render_edge_image(soccer, CameraPose(pan_deg=-pan, **kw)).pixels
    # mirror about the principal point u = 640, i.e. column c -> 1279 - c
    agree = np.mean(a == b[:, ::-1])
    assert agree >= 0.99


def _analytic_samples(template, pose, step_m=0.02):
    pts = []
    for a, b in template.segments:
        n = max(2, int(np.hypot(b[0] - a[0], b[1] - a[1]) / step_m) + 1)
        t = np.linspace(0, 1, n)[:, None]
        pts.append((1 - t) * np.array(a) + t * np.array(b))
    for c, r, s, e in template.arcs:
        n = max(2, int(np.radians(e - s) * r / step_m) + 1)
        ang = np.radians(np.linspace(s, e, n))
        pts.append(np.c_[c[0] + r * np.cos(ang), c[1] + r * np.sin(ang)])
    xy = np.vstack(pts)
    uv, ok = project_points(projection_from_pose(pose), np.c_[xy, np.zeros(len(xy))])
    return uv[ok]


def test_pixels_near_analytic_curves(soccer):
    width = 4.0
    for pose in sample_poses(WORLD_CUP, 6):
        img = render_edge_image(soccer, pose, width)
        ys, xs = np.nonzero(img.pixels)
        assert len(xs) > 0
        uv = _analytic_samples(soccer, pose)
        keep = (uv[:, 0] > -50) & (uv[:, 0] < 1330) & (uv[:, 1] > -50) & (uv[:, 1] < 770)
        tree = cKDTree(uv[keep])
        # pixel centers sit at integer coordinates + 0.5
        d, _ = tree.query(np.c_[xs + 0.5, ys + 0.5])
        # curve sampling is dense relative to the stroke, so add only its half-spacing
        spacing = pose.focal_length * 0.02 / 20.0
        assert d.max() <= width + spacing


def test_every_sampled_pose_sees_the_field(soccer):
    for pose in sample_poses(WORLD_CUP, 40):
        assert render_edge_image(soccer, pose).edge_count() > 0


def test_render_deterministic(soccer):
    pose = CameraPose(2500, 12, -9, 0.05, center=(50, -40, 15))
    assert render_edge_image(soccer, pose) == render_edge_image(soccer, pose)


def test_render_rejects_thin_lines(soccer):
    with pytest.raises(ValueError):
        render_edge_image(soccer, CameraPose(2000, 0, -10), 0.5)


def test_resize_constants():
    assert not resize_to_feature_scale(np.zeros((720, 1280), np.uint8)).any()
    out = resize_to_feature_scale(np.full((720, 1280), 255, np.uint8))
    assert out.shape == (180, 320) and np.all(out == 255)


def test_resize_single_block():
    img = np.zeros((720, 1280), np.uint8)
    img[100:104, 400:404] = 255
    out = resize_to_feature_scale(img)
    assert out[25, 100] == 255
    assert np.count_nonzero(out) == 1


def test_resize_partial_block_average():
    img = np.zeros((720, 1280), np.uint8)
    img[100:102, 400:404] = 255
    assert resize_to_feature_scale(img)[25, 100] == 128


def test_binarize():
    raster = np.array([[127, 128, 0, 255]], np.uint8)
    out = binarize(raster)
    assert out.pixels.tolist() == [[0, 255, 0, 255]]
    assert binarize(out) == out
    assert binarize(raster, 200).pixels.tolist() == [[0, 0, 0, 255]]


def test_edge_image_invariants():
    with pytest.raises(ValueError):
        EdgeImage(np.array([[0, 1]], np.uint8))


def test_pgm_round_trip(tmp_path, rng):
    raster = rng.integers(0, 256, size=(37, 53), dtype=np.uint8)
    p = tmp_path / "x.pgm"
    write_pgm(p, raster)
    assert p.read_bytes().startswith(b"P5\n53 37\n255\n")
    np.testing.assert_array_equal(read_pgm(p), raster)
    np.testing.assert_array_equal(read_image(p), raster)


def test_pgm_with_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    assert read_pgm(p).tolist() == [[0, 255]]


def test_pgm_errors(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ImageFormatError):
        read_pgm(p)
    p.write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(ImageFormatError):
        read_pgm(p)


def test_png_optional(tmp_path):
    pytest.importorskip("PIL")
    raster = np.zeros((4, 6), np.uint8)
    raster[1, 2] = 255
    p = tmp_path / "x.png"
    write_image(p, raster)
    np.testing.assert_array_equal(read_image(p), raster)
