import numpy as np
import pytest

from anchorloc.geom import Pose, project
from anchorloc.solvers import (
    CheiralityFailure,
    InsufficientParallax,
    ReprojectionTooLarge,
    TriangulationConfig,
    triangulate,
)
from conftest import random_pose


def _views(rng, X, n=2, baseline=2.0):
    poses = []
    for i in range(n):
        c = np.array([i * baseline, 0.0, 0.0]) + rng.normal(scale=0.1, size=3)
        # look roughly at the point
        f = X - c
        f = f / np.linalg.norm(f)
        up = np.array([0.0, 1.0, 0.0])
        x = np.cross(up, f)
        x = x / np.linalg.norm(x)
        y = np.cross(f, x)
        R = np.stack([x, y, f])
        poses.append(Pose.from_rt(R, -R @ c))
    return poses


def test_triangulate_exact(intrinsics):
    rng = np.random.default_rng(0)
    for _ in range(50):
        X = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(8, 20)])
        poses = _views(rng, X)
        pixels = [project(intrinsics, p, X) for p in poses]
        got = triangulate(poses, pixels, intrinsics)
        assert np.linalg.norm(got - X) < 1e-8


def test_triangulate_multiview(intrinsics):
    rng = np.random.default_rng(1)
    X = np.array([0.5, -0.3, 12.0])
    poses = _views(rng, X, n=5)
    pixels = [project(intrinsics, p, X) for p in poses]
    got = triangulate(poses, pixels, intrinsics)
    assert np.linalg.norm(got - X) < 1e-8


def test_triangulate_insufficient_parallax(intrinsics):
    rng = np.random.default_rng(2)
    X = np.array([0.0, 0.0, 500.0])
    poses = _views(rng, X, baseline=0.5)
    pixels = [project(intrinsics, p, X) for p in poses]
    with pytest.raises(InsufficientParallax):
        triangulate(poses, pixels, intrinsics, TriangulationConfig(min_angle_deg=1.5))


def test_triangulate_reprojection_gate(intrinsics):
    rng = np.random.default_rng(3)
    X = np.array([0.0, 0.0, 10.0])
    poses = _views(rng, X)
    pixels = [project(intrinsics, p, X) for p in poses]
    # offset perpendicular to the epipolar direction so no depth explains it
    pixels[1] = pixels[1] + np.array([0.0, 25.0])
    with pytest.raises(ReprojectionTooLarge):
        triangulate(poses, pixels, intrinsics, TriangulationConfig(max_reprojection_px=4.0))


def test_triangulate_cheirality(intrinsics):
    # two cameras looking away from each other see mirror pixels of a point
    # that cannot be in front of both
    a = Pose.identity()
    b = Pose.from_rt(
        np.diag([1.0, -1.0, -1.0]), np.array([0.0, 0.0, -30.0])
    )  # rotated 180 deg about x
    pixels = [np.array([320.0, 250.0]), np.array([320.0, 250.0])]
    with pytest.raises((CheiralityFailure, InsufficientParallax, ReprojectionTooLarge)):
        triangulate([a, b], pixels, intrinsics, TriangulationConfig(min_angle_deg=0.0))


def test_triangulate_input_validation(intrinsics):
    with pytest.raises(ValueError):
        triangulate([Pose.identity()], [np.zeros(2)], intrinsics)
