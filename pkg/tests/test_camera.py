from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sportcal.camera import (CameraPose, DegeneratePoseError, NonPhysicalHomographyError,
                             fit_pose_to_homography, homography_from_pose, intrinsic_matrix,
                             normalize_homography, oriented_homography, pose_from_homography,
                             project_point, project_points, projection_from_pose,
                             rotation_from_pose)
from sportcal.sampling import WORLD_CUP, sample_poses

poses = st.builds(
    CameraPose,
    focal_length=st.floats(1000, 6000),
    pan_deg=st.floats(-35, 35),
    tilt_deg=st.floats(-15, -5),
    roll_deg=st.floats(-0.1, 0.1),
    center=st.tuples(st.floats(46, 58), st.floats(-70, -20), st.floats(8, 26)),
)


def test_zero_pose_axes():
    R = rotation_from_pose(CameraPose(1000, 0, 0))
    np.testing.assert_allclose(R @ [0, 1, 0], [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(R @ [1, 0, 0], [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(R @ [0, 0, 1], [0, -1, 0], atol=1e-15)


def test_rotation_orthonormal_example():
    R = rotation_from_pose(CameraPose(1000, 10, -12, 0.05))
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1) < 1e-12


@given(poses)
def test_rotation_orthonormal_property(pose):
    R = rotation_from_pose(pose)
    assert np.linalg.norm(R.T @ R - np.eye(3)) < 1e-10
    assert abs(np.linalg.det(R) - 1) < 1e-10


def test_sign_conventions():
    # negative tilt looks down: a ground point straight ahead lands below the image center
    P = projection_from_pose(CameraPose(1000, 0, -10, center=(52, -45, 17)))
    u, v = project_point(P, (52, 50, 0))
    assert v > 360 and abs(u - 640) < 1e-9
    # positive pan turns toward world +X
    P = projection_from_pose(CameraPose(1000, 10, 0, center=(52, -45, 17)))
    u, _ = project_point(P, (52 + 20, -45 + 100, 17))
    assert abs(u - 640) < abs(project_point(P, (52 - 20, 55, 17))[0] - 640)


def test_optical_axis_hits_principal_point():
    P = projection_from_pose(CameraPose(2000, 0, 0, center=(52, -45, 17)))
    for d in (1.0, 10.0, 300.0):
        np.testing.assert_allclose(project_point(P, (52, -45 + d, 17)), (640, 360), atol=1e-9)


def test_center_is_null_space_and_behind_marker():
    pose = CameraPose(1500, 7, -9, 0.02, center=(50, -40, 15))
    P = projection_from_pose(pose)
    np.testing.assert_allclose(P @ [*pose.center, 1.0], 0, atol=1e-9)
    assert project_point(P, pose.center) is None
    assert np.linalg.det(P[:, :3]) > 0


def test_world_origin_in_or_near_frame_for_mean_pose():
    P = projection_from_pose(CameraPose(1000, 0, -10, center=(52, -45, 17)))
    uv = project_point(P, (0, 0, 0))
    K = intrinsic_matrix(1000, 1280, 720)
    R = rotation_from_pose(CameraPose(1000, 0, -10))
    x = K @ R @ (np.zeros(3) - np.array([52, -45, 17]))
    np.testing.assert_allclose(uv, x[:2] / x[2], rtol=1e-12)
    assert np.all(np.isfinite(uv))


def test_field_corners_finite_for_sampled_poses():
    corners = np.array([[0, 0, 0], [105, 0, 0], [105, 68, 0], [0, 68, 0]], dtype=float)
    behind = 0
    for pose in sample_poses(WORLD_CUP, 1000):
        P = projection_from_pose(pose)
        x = np.c_[corners, np.ones(4)] @ P.T
        assert np.all(x[:, 2] != 0)
        assert np.all(np.isfinite(x[:, :2] / x[:, 2:]))
        _, ok = project_points(P, corners)
        behind += int(not ok.all())
    # wide pans from a near camera can put one near corner just behind the image plane
    assert behind < 30


@given(poses, st.floats(-10, 120), st.floats(-10, 80))
def test_homography_agrees_with_projection(pose, x, y):
    H = homography_from_pose(pose)
    p = project_point(projection_from_pose(pose), (x, y, 0))
    q = H @ [x, y, 1]
    if p is not None:
        np.testing.assert_allclose(q[:2] / q[2], p, atol=1e-9 * max(1.0, np.abs(p).max()))


def test_homography_symmetric_about_principal_ray():
    H = homography_from_pose(CameraPose(2000, 0, -10, center=(52.5, -45, 17)))
    for y in (0, 20, 68):
        q = H @ [52.5, y, 1]
        assert abs(q[0] / q[2] - 640) < 1e-9


def test_normalization():
    H = homography_from_pose(CameraPose(2000, 5, -10))
    assert H[2, 2] == 1.0
    m = np.array([[1.0, 0, 0], [0, 1, 0], [1, 1, 0]])
    assert abs(np.linalg.norm(normalize_homography(m)) - 1) < 1e-15


def test_round_trip_1000_poses():
    worst = np.zeros(4)
    for pose in sample_poses(WORLD_CUP, 1000):
        got = pose_from_homography(homography_from_pose(pose), 1280, 720)
        err = [abs(got.focal_length - pose.focal_length), abs(got.pan_deg - pose.pan_deg),
               abs(got.tilt_deg - pose.tilt_deg),
               np.linalg.norm(np.subtract(got.center, pose.center))]
        worst = np.maximum(worst, err)
    assert worst[0] < 1e-3 and worst[1] < 1e-5 and worst[2] < 1e-5 and worst[3] < 1e-4


def test_zero_pan_tilt_recovery():
    pose = CameraPose(1500, 0, 0, center=(52, -45, 17))
    got = pose_from_homography(homography_from_pose(pose), 1280, 720)
    assert abs(got.pan_deg) < 1e-6


@given(poses, st.floats(0.01, 100).flatmap(lambda s: st.sampled_from([s, -s])))
def test_scale_and_sign_invariance(pose, scale):
    H = homography_from_pose(pose)
    a = pose_from_homography(H, 1280, 720)
    b = pose_from_homography(scale * H, 1280, 720)
    np.testing.assert_allclose(a.to_vector(), b.to_vector(), rtol=1e-9, atol=1e-9)


def test_oriented_homography_gives_positive_depth():
    pose = CameraPose(2000, 5, -10)
    H = -3.0 * homography_from_pose(pose)
    assert (oriented_homography(H) @ [52, 30, 1])[2] > 0


def test_non_physical_errors():
    with pytest.raises(NonPhysicalHomographyError):
        pose_from_homography(np.diag([1.0, 1.0, 1.0]), 1280, 720)
    with pytest.raises(NonPhysicalHomographyError):
        pose_from_homography(np.full((3, 3), np.nan), 1280, 720)


def test_degenerate_pose():
    with pytest.raises(DegeneratePoseError):
        homography_from_pose(CameraPose(1000, 0, -10, center=(52, -45, 0.0)))


def test_pose_validation():
    with pytest.raises(ValueError):
        CameraPose(0, 0, -10)
    with pytest.raises(ValueError):
        CameraPose(1000, 0, -10, roll_deg=0.6)
    with pytest.raises(ValueError):
        CameraPose(1000, 0, -10, image_width=0)


def test_vector_and_dict_round_trip():
    pose = CameraPose(1234.5, 3.25, -7.5, 0.05, -90, (1.0, 2.0, 3.0), 1280, 720)
    v = pose.to_vector()
    assert v.shape == (9,) and v[-1] == 0.0
    assert list(v) == [1234.5, 3.25, -7.5, 0.05, -90, 1.0, 2.0, 3.0, 0.0]
    assert CameraPose.from_vector(v) == pose
    d = pose.to_dict()
    assert set(d) == {"focal_length", "pan_deg", "tilt_deg", "roll_deg", "base_tilt_deg",
                      "center", "image_size"}
    assert CameraPose.from_dict(d) == pose


def test_fit_pose_recovers_exact_homography():
    truth = CameraPose(3000, 10, -9, 0.05, center=(50, -40, 15))
    start = CameraPose(2800, 9, -10, -0.05, center=(52, -45, 17))
    got, rms = fit_pose_to_homography(homography_from_pose(truth), start)
    assert rms < 1e-6
    np.testing.assert_allclose(got.to_vector(), truth.to_vector(), atol=1e-6)


def test_fit_pose_keeps_roll_in_range():
    # a homography with a visible in-plane twist cannot be matched with |roll| <= 0.5
    base = homography_from_pose(CameraPose(2000, 0, -10))
    c, s = math.cos(math.radians(3)), math.sin(math.radians(3))
    twist = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    T = np.array([[1, 0, -640], [0, 1, -360], [0, 0, 1.0]])
    got, rms = fit_pose_to_homography(np.linalg.inv(T) @ twist @ T @ base, CameraPose(2000, 0, -10))
    assert abs(got.roll_deg) <= 0.5 and rms > 1.0
