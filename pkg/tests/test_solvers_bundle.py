import numpy as np

from anchorloc.geom import CameraIntrinsics, Pose, project
from anchorloc.matching import FeatureSet
from anchorloc.model import Frame, Landmark, SfMModel, frozen_state_digest
from anchorloc.solvers import BundleConfig, FreezeMask, bundle_adjust
from anchorloc.solvers.bundle import mean_reprojection_error


def _ring_model(n_cams=5, n_pts=40, seed=0, noise=0.0):
    """Noise-free ring of cameras around a point cloud, exact observations."""
    rng = np.random.default_rng(seed)
    intr = CameraIntrinsics(400.0, 400.0, 320.0, 240.0, 640, 480)
    pts = rng.normal(scale=2.0, size=(n_pts, 3))
    model = SfMModel()
    obs = {i: [] for i in range(n_pts)}
    for c in range(n_cams):
        ang = 2 * np.pi * c / n_cams
        center = 12.0 * np.array([np.cos(ang), np.sin(ang), 0.2 * c])
        f = -center / np.linalg.norm(center)
        up = np.array([0.0, 0.0, 1.0])
        x = np.cross(up, f)
        x /= np.linalg.norm(x)
        y = np.cross(f, x)
        R = np.stack([x, y, f])
        pose = Pose.from_rt(R, -R @ center)
        pixels = []
        for i, X in enumerate(pts):
            uv = project(intr, pose, X)
            if noise:
                uv = uv + rng.normal(scale=noise, size=2)
            obs[i].append((c, len(pixels)))
            pixels.append(uv)
        fs = FeatureSet(np.array(pixels), np.zeros((len(pixels), 4)))
        model.add_frame(Frame(c, float(c), intr, fs, pose, "reference"))
    for i, X in enumerate(pts):
        model.add_landmark(Landmark(i, X.copy(), "reference", obs[i]))
    return model


def test_noise_free_model_has_zero_error():
    model = _ring_model()
    assert mean_reprojection_error(model) < 1e-9


def test_bundle_cost_non_increasing_and_recovers_perturbation():
    model = _ring_model()
    # free one camera, perturb it, freeze the rest
    model.frames[2].status = "registered"
    for lm in model.landmarks.values():
        lm.origin = "reference"
    mask = FreezeMask(
        frozen_frame_ids={0, 1, 3, 4}, frozen_landmark_ids=set(model.landmarks)
    )
    pose = model.frames[2].pose
    tweak = np.concatenate([np.radians(0.5) * np.array([1.0, 0.0, 0.0]), np.zeros(3)])
    model.frames[2].pose = Pose(pose.q.copy(), pose.t * 1.01).retract(tweak)
    res = bundle_adjust(model, mask, BundleConfig(max_lm_iterations=25))
    assert res.cost_after <= res.cost_before
    assert mean_reprojection_error(model) < 1e-6


def test_bundle_frozen_blocks_bit_identical():
    model = _ring_model(noise=0.3)
    model.frames[1].status = "registered"
    mask = FreezeMask(
        frozen_frame_ids={0, 2, 3, 4},
        frozen_landmark_ids=set(list(model.landmarks)[:30]),
    )
    before = frozen_state_digest(model, mask)
    bundle_adjust(model, mask, BundleConfig())
    assert frozen_state_digest(model, mask) == before


def test_bundle_all_frozen_is_a_no_op():
    model = _ring_model()
    mask = FreezeMask(set(model.frames), set(model.landmarks))
    q0 = {fid: f.pose.q.copy() for fid, f in model.frames.items()}
    res = bundle_adjust(model, mask, BundleConfig())
    assert res.all_frozen
    for fid, f in model.frames.items():
        assert np.array_equal(f.pose.q, q0[fid])


def test_bundle_reduces_noisy_cost():
    model = _ring_model(noise=0.0)
    # perturb all landmarks slightly; cameras frozen
    rng = np.random.default_rng(3)
    for lm in model.landmarks.values():
        lm.position = lm.position + rng.normal(scale=0.05, size=3)
    mask = FreezeMask(frozen_frame_ids=set(model.frames), frozen_landmark_ids=set())
    res = bundle_adjust(model, mask, BundleConfig())
    assert res.cost_after < res.cost_before
    assert mean_reprojection_error(model) < 1e-6


def test_bundle_config_validation():
    import pytest

    with pytest.raises(ValueError):
        BundleConfig(max_lm_iterations=0)
    with pytest.raises(ValueError):
        BundleConfig(huber_delta=-1.0)
