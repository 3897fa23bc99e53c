import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchorloc.geom import (
    BehindCamera,
    CameraIntrinsics,
    Pose,
    mat_to_quat,
    project,
    project_many,
    quat_mul,
    quat_normalize,
    quat_to_mat,
    reprojection_residual,
    residual_jacobian,
    rotation_angle,
    so3_exp_quat,
)
from conftest import random_pose, random_rotation


def test_quat_normalize_canonical_sign():
    q = quat_normalize([-1.0, 0.2, 0.0, 0.0])
    assert q[0] > 0
    assert np.isclose(np.linalg.norm(q), 1.0)


def test_quat_normalize_rejects_zero():
    with pytest.raises(ValueError):
        quat_normalize([0.0, 0.0, 0.0, 0.0])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_mat_quat_round_trip(seed):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    assert rotation_angle(R, quat_to_mat(mat_to_quat(R))) < 1e-7


def test_mat_to_quat_covers_all_branches():
    # rotations by pi about each axis hit the trace <= 0 branches
    for axis in np.eye(3):
        R = quat_to_mat(so3_exp_quat(np.pi * axis))
        assert rotation_angle(R, quat_to_mat(mat_to_quat(R))) < 1e-10


def test_quat_mul_matches_matrix_product():
    rng = np.random.default_rng(0)
    qa = mat_to_quat(random_rotation(rng))
    qb = mat_to_quat(random_rotation(rng))
    np.testing.assert_allclose(
        quat_to_mat(quat_normalize(quat_mul(qa, qb))),
        quat_to_mat(qa) @ quat_to_mat(qb),
        atol=1e-12,
    )


def test_so3_exp_small_angle():
    q = so3_exp_quat([1e-14, 0.0, 0.0])
    assert np.isclose(np.linalg.norm(q), 1.0)
    assert rotation_angle(quat_to_mat(q), np.eye(3)) < 1e-12


def test_pose_compose_inverse_center():
    rng = np.random.default_rng(1)
    a = random_pose(rng)
    b = random_pose(rng)
    p = rng.normal(size=3)
    np.testing.assert_allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)
    np.testing.assert_allclose(a.compose(a.inverse()).apply(p), p, atol=1e-12)
    np.testing.assert_allclose(a.apply(a.center()), np.zeros(3), atol=1e-12)


def test_pose_retract_zero_is_identity():
    rng = np.random.default_rng(2)
    pose = random_pose(rng)
    r = pose.retract(np.zeros(6))
    assert rotation_angle(pose.R, r.R) < 1e-12
    np.testing.assert_allclose(pose.t, r.t, atol=1e-12)


def test_pose_view_direction_unit():
    rng = np.random.default_rng(3)
    pose = random_pose(rng)
    assert np.isclose(np.linalg.norm(pose.view_direction()), 1.0)


def test_project_and_behind_camera(intrinsics):
    pose = Pose.identity()
    uv = project(intrinsics, pose, [0.0, 0.0, 2.0])
    np.testing.assert_allclose(uv, [intrinsics.cx, intrinsics.cy])
    with pytest.raises(BehindCamera):
        project(intrinsics, pose, [0.0, 0.0, -1.0])


def test_reprojection_residual_zero_at_projection(intrinsics):
    rng = np.random.default_rng(4)
    pose = random_pose(rng)
    X = (np.array([0.5, -0.2, 6.0]) - pose.t) @ pose.R
    uv = project(intrinsics, pose, X)
    np.testing.assert_allclose(reprojection_residual(intrinsics, pose, X, uv), 0.0, atol=1e-10)


def test_project_many_matches_scalar(intrinsics):
    rng = np.random.default_rng(5)
    pose = random_pose(rng)
    from conftest import points_in_front

    pts = points_in_front(rng, pose, 20)
    uv, z = project_many(pose.R, pose.t, intrinsics, pts)
    assert np.all(z > 0)
    for i in range(len(pts)):
        np.testing.assert_allclose(uv[i], project(intrinsics, pose, pts[i]), atol=1e-10)


def test_residual_jacobian_vs_central_differences(intrinsics):
    rng = np.random.default_rng(6)
    from conftest import points_in_front

    eps = 1e-6
    for _ in range(20):
        pose = random_pose(rng)
        X = points_in_front(rng, pose, 1)[0]
        obs = project(intrinsics, pose, X) + rng.normal(scale=1.0, size=2)
        Jpose, Jpoint = residual_jacobian(intrinsics, pose, X)
        for k in range(6):
            d = np.zeros(6)
            d[k] = eps
            num = (
                reprojection_residual(intrinsics, pose.retract(d), X, obs)
                - reprojection_residual(intrinsics, pose.retract(-d), X, obs)
            ) / (2 * eps)
            np.testing.assert_allclose(Jpose[:, k], num, rtol=1e-5, atol=1e-7)
        for k in range(3):
            d = np.zeros(3)
            d[k] = eps
            num = (
                reprojection_residual(intrinsics, pose, X + d, obs)
                - reprojection_residual(intrinsics, pose, X - d, obs)
            ) / (2 * eps)
            np.testing.assert_allclose(Jpoint[:, k], num, rtol=1e-5, atol=1e-7)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(-1.0, 500.0, 320.0, 240.0, 640, 480)
    with pytest.raises(ValueError):
        CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 0, 480)


def test_in_bounds(intrinsics):
    ok = intrinsics.in_bounds(np.array([[0.0, 0.0], [639.0, 479.0], [-0.1, 10.0], [10.0, 479.5]]))
    assert list(ok) == [True, True, False, False]
