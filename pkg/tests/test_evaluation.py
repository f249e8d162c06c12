from __future__ import annotations

import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sportcal.camera import CameraPose, homography_from_pose
from sportcal.evaluation import (DegenerateRegionError, DisplacementExperimentConfig,
                                 clip_convex, convex_iou, displaced_center,
                                 evaluate_poses, experiment_database_poses,
                                 experiment_test_sample, footprint, iou_part, iou_whole,
                                 polygon_area, pose_iou, raster_iou, run_displacement_experiment,
                                 visible_field)
from sportcal.sampling import WORLD_CUP, sample_poses


def plane_translation(dx: float, dy: float = 0.0) -> np.ndarray:
    return np.array([[1.0, 0, dx], [0, 1.0, dy], [0, 0, 1.0]])


def plane_rotation(deg: float, cx: float = 52.5, cy: float = 34.0) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    T = plane_translation(cx, cy)
    return T @ np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]]) @ np.linalg.inv(T)


H0 = homography_from_pose(CameraPose(1500, 5, -12, center=(52, -45, 17)))


def test_identity_exact(soccer):
    assert iou_whole(H0, H0, soccer) == 1.0
    assert iou_part(H0, H0, soccer) == 1.0
    assert iou_part(H0, H0, soccer, clip_to_field=False) == 1.0


def test_one_metre_translation_closed_form(soccer):
    # field shifted 1 m along its length: overlap 104 x 68, union 106 x 68
    h_est = H0 @ plane_translation(1.0)
    expected = (104 * 68) / (2 * 105 * 68 - 104 * 68)
    assert abs(iou_whole(H0, h_est, soccer) - expected) < 1e-12
    assert abs(expected - 0.981132) < 1e-6


@pytest.mark.parametrize("T", [plane_translation(3, -2), plane_rotation(7), plane_rotation(-30)])
def test_whole_symmetric_for_plane_isometries(soccer, T):
    a = iou_whole(H0, H0 @ T, soccer)
    b = iou_whole(H0 @ T, H0, soccer)
    assert abs(a - b) < 1e-9


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-20, 20))
def test_part_symmetric(dx, dy, deg):
    from sportcal.template import builtin_soccer
    t = builtin_soccer()
    he = H0 @ plane_translation(dx, dy) @ plane_rotation(deg)
    for clip in (True, False):
        try:
            a = iou_part(H0, he, t, clip_to_field=clip)
            b = iou_part(he, H0, t, clip_to_field=clip)
        except DegenerateRegionError:
            continue
        assert abs(a - b) < 1e-9 and 0.0 <= a <= 1.0


@pytest.mark.parametrize("scale", [1e-3, -2.0, 1e4])
def test_scale_invariance(soccer, scale):
    he = H0 @ plane_rotation(3)
    assert abs(iou_whole(H0, scale * he, soccer) - iou_whole(H0, he, soccer)) < 1e-12
    assert abs(iou_part(scale * H0, he, soccer) - iou_part(H0, he, soccer)) < 1e-12


def _bounds_of(*polys, pad=1.0):
    pts = np.vstack([p for p in polys if len(p)])
    return (pts[:, 0].min() - pad, pts[:, 0].max() + pad, pts[:, 1].min() - pad,
            pts[:, 1].max() + pad)


def test_part_matches_raster_oracle(soccer):
    poses = sample_poses(WORLD_CUP, 24)
    for a, b in zip(poses[0::2], poses[1::2]):
        ha, hb = homography_from_pose(a), homography_from_pose(b)
        poly = iou_part(ha, hb, soccer)
        box = _bounds_of(visible_field(ha, soccer, (1280, 720)),
                         visible_field(hb, soccer, (1280, 720)))
        raster = iou_part(ha, hb, soccer, force_raster=True, raster_cell=0.02, bounds=box)
        assert abs(poly - raster) <= 0.005


def test_part_near_pairs_match_raster_oracle(soccer):
    for pose in sample_poses(WORLD_CUP, 8):
        ha = homography_from_pose(pose)
        hb = homography_from_pose(CameraPose(pose.focal_length * 1.03, pose.pan_deg + 0.7,
                                             pose.tilt_deg - 0.3, center=pose.center))
        poly = iou_part(ha, hb, soccer)
        box = _bounds_of(visible_field(ha, soccer, (1280, 720)),
                         visible_field(hb, soccer, (1280, 720)))
        raster = iou_part(ha, hb, soccer, force_raster=True, raster_cell=0.02, bounds=box)
        assert 0.3 < poly < 1.0
        assert abs(poly - raster) <= 0.005


def test_unclipped_part_matches_raster_oracle(soccer):
    # zoomed-in views keep the whole footprint on the near side of the horizon
    pa = CameraPose(3000, 4, -12, center=(52, -45, 17))
    pb = CameraPose(3100, 4.6, -12.2, center=(52, -45, 17))
    ha, hb = homography_from_pose(pa), homography_from_pose(pb)
    fa, fb = footprint(ha, (1280, 720)), footprint(hb, (1280, 720))
    assert fa is not None and fb is not None
    poly = iou_part(ha, hb, soccer, clip_to_field=False)
    raster = iou_part(ha, hb, soccer, clip_to_field=False, force_raster=True, raster_cell=0.02,
                      bounds=_bounds_of(fa, fb))
    assert abs(poly - raster) <= 0.005


def test_whole_matches_raster_oracle(soccer):
    for T in (plane_rotation(4), plane_translation(2, 1) @ plane_rotation(-9)):
        poly = iou_whole(H0, H0 @ T, soccer)
        raster = iou_whole(H0, H0 @ T, soccer, force_raster=True, raster_cell=0.02)
        assert abs(poly - raster) <= 0.005


def test_whole_raster_fallback_past_horizon(soccer):
    # the estimate sees the far touchline near its horizon: the warped field reaches infinity
    he = homography_from_pose(CameraPose(1000, 0, -1, center=(52, -45, 2)))
    v = iou_whole(H0, he, soccer)
    assert 0.0 <= v < 0.9


def test_random_convex_quads_against_raster(rng):
    def quad():
        # points on a circle in angular order form a convex quadrilateral
        ang = np.sort(rng.uniform(0, 2 * np.pi, 4))
        r = rng.uniform(3, 8)
        cx, cy = rng.uniform(8, 12, 2)
        return np.c_[cx + r * np.cos(ang), cy + r * np.sin(ang)]

    for _ in range(20):
        a, b = quad(), quad()
        try:
            exact = convex_iou(a, b)
        except DegenerateRegionError:
            continue

        def inside(poly):
            poly = poly if polygon_area(poly) > 0 else poly[::-1]

            def test(xy):
                ok = np.ones(len(xy), bool)
                for i in range(4):
                    p, q = poly[i], poly[(i + 1) % 4]
                    ok &= (q[0] - p[0]) * (xy[:, 1] - p[1]) - (q[1] - p[1]) * (xy[:, 0] - p[0]) >= 0
                return ok
            return test

        approx = raster_iou(inside(a), inside(b), (-1, 21, -1, 21), cell=0.02)
        assert abs(exact - approx) <= 0.005


def test_clip_convex_square():
    a = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], float)
    b = a + 1
    assert abs(polygon_area(clip_convex(a, b)) - 1.0) < 1e-12
    assert abs(convex_iou(a, b) - 1 / 7) < 1e-12
    assert len(clip_convex(a, a + 5)) == 0


def test_pan_sweep_monotone(soccer):
    base = CameraPose(2000, 3, -10, center=(52, -45, 17))
    hg = homography_from_pose(base)
    prev = 1.0
    for k in range(1, 21):
        est = CameraPose(2000, 3 + 0.5 * k, -10, center=(52, -45, 17))
        v = iou_part(hg, homography_from_pose(est), soccer)
        assert 0.0 <= v <= prev
        prev = v
    assert prev < 0.9


def test_degenerate_regions(soccer):
    flat = np.array([[0, 0], [1, 0], [2, 0], [3, 0]], float)
    with pytest.raises(DegenerateRegionError):
        convex_iou(flat, flat)
    away = homography_from_pose(CameraPose(2000, 180, -10, center=(52, -45, 17)))
    with pytest.raises(DegenerateRegionError):
        iou_part(away, away, soccer)
    # one view sees the field, the other does not: no overlap, but well defined
    assert iou_part(H0, away, soccer) == 0.0


def test_invalid_homographies(soccer):
    with pytest.raises(ValueError):
        iou_part(np.zeros((3, 3)), H0, soccer)
    with pytest.raises(ValueError):
        iou_whole(np.full((3, 3), np.nan), H0, soccer)


def test_pose_iou_metric_names(soccer):
    p = CameraPose(1500, 5, -12, center=(52, -45, 17))
    assert pose_iou(p, p, soccer, "whole") == pose_iou(p, p, soccer, "part") == 1.0
    with pytest.raises(ValueError):
        pose_iou(p, p, soccer, "both")


def test_evaluate_poses(soccer):
    gt = {"a": CameraPose(1500, 5, -12, center=(52, -45, 17)),
          "b": CameraPose(2500, -8, -9, center=(50, -40, 15))}
    rep = evaluate_poses(gt, gt, soccer)
    assert rep.iou_whole == rep.iou_part == rep.median_whole == rep.median_part == 1.0
    pred = {"a": CameraPose(1500, 5.5, -12, center=(52, -45, 17))}
    single = evaluate_poses(pred, {"a": gt["a"]}, soccer, "part")
    assert single.iou_part == single.median_part == pose_iou(gt["a"], pred["a"], soccer)
    assert single.iou_whole is None
    with pytest.raises(KeyError, match="b"):
        evaluate_poses(pred, gt, soccer)


def test_displaced_center_in_bin(rng):
    bins = DisplacementExperimentConfig().bins
    for _ in range(200):
        c, b, mag = displaced_center((52, -45, 17), rng, bins)
        lo, hi = bins[b]
        assert lo <= mag <= hi
        assert abs(np.linalg.norm(c - [52, -45, 17]) - mag) < 1e-9
        assert c[2] > 1.0


def test_experiment_streams():
    cfg = DisplacementExperimentConfig(db_size=5, test_size=5)
    db = experiment_database_poses(cfg)
    assert all(p.center == (52.0, -45.0, 17.0) for p in db)
    pose, b, mag = experiment_test_sample(cfg, 3)
    assert pose == experiment_test_sample(cfg, 3)[0]
    assert pose.center != (52.0, -45.0, 17.0)


def test_config_validation():
    with pytest.raises(ValueError):
        DisplacementExperimentConfig(db_size=0)
    with pytest.raises(ValueError):
        DisplacementExperimentConfig(bin_edges_m=(0, 2, 1))


@pytest.fixture(scope="module")
def tiny_result(soccer):
    cfg = DisplacementExperimentConfig(db_size=60, test_size=6, bin_edges_m=(0, 2, 4))
    return cfg, run_displacement_experiment(cfg, soccer)


def test_experiment_report(tiny_result):
    cfg, res = tiny_result
    rows = list(csv.DictReader(io.StringIO(res.csv_text())))
    assert list(rows[0]) == ["bin_low_m", "bin_high_m", "n", "retrieval_mean", "retrieval_std",
                             "refined_mean", "refined_std"]
    assert len(rows) == 2 and sum(int(r["n"]) for r in rows) == 6
    for item in res.items:
        assert 0 <= item["iou_part_retrieval"] <= 1 and 0 <= item["iou_part_refined"] <= 1
    assert len(res.jsonl_text().splitlines()) == 6
    assert "retrieval" in res.table()


def test_experiment_deterministic_across_threads(tiny_result, soccer):
    cfg, res = tiny_result
    again = run_displacement_experiment(cfg, soccer, threads=3)
    assert again.csv_text() == res.csv_text()
    assert again.jsonl_text() == res.jsonl_text()
