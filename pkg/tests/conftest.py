import numpy as np
import pytest

from anchorloc.geom import CameraIntrinsics, Pose, so3_exp_quat, quat_to_mat
from anchorloc.model import Frame
from anchorloc.synth import SceneConfig, anchor_scores, build_reference_model, generate_scene


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


def random_rotation(rng):
    w = rng.normal(size=3)
    w = w / np.linalg.norm(w) * rng.uniform(0.1, np.pi - 0.1)
    return quat_to_mat(so3_exp_quat(w))


def random_pose(rng, t_scale=2.0):
    return Pose.from_rt(random_rotation(rng), rng.normal(scale=t_scale, size=3))


def points_in_front(rng, pose, n, depth=(4.0, 12.0), spread=3.0):
    """World points that project with positive depth for the given pose."""
    cam = np.column_stack(
        [
            rng.uniform(-spread, spread, n),
            rng.uniform(-spread, spread, n),
            rng.uniform(depth[0], depth[1], n),
        ]
    )
    return (cam - pose.t) @ pose.R


SMALL_SCENE = SceneConfig(
    rng_seed=3,
    landmark_count=1200,
    aliased_group_count=20,
    aliased_group_size=4,
    n_database_frames=80,
    n_query_frames=80,
    fx=420.0,
    fy=420.0,
)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(SMALL_SCENE)


# function-scoped: the pipeline mutates the model it is given
@pytest.fixture
def small_reference(small_scene):
    return build_reference_model(small_scene)


@pytest.fixture(scope="session")
def small_scores(small_scene):
    return anchor_scores(small_scene)


def query_frames(dataset):
    intr = dataset.intrinsics()
    frames = [
        Frame(sf.id, sf.timestamp, intr, sf.features, None, "pending") for sf in dataset.query
    ]
    frames.sort(key=lambda f: f.timestamp)
    return frames


def query_gt(dataset):
    return {sf.id: sf.pose.center() for sf in dataset.query}
