import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchorloc.solvers import DegenerateConfiguration, umeyama_similarity
from conftest import random_rotation


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_umeyama_recovers_planted_transform(seed):
    rng = np.random.default_rng(seed)
    src = rng.normal(scale=3.0, size=(12, 3))
    s = rng.uniform(0.2, 5.0)
    R = random_rotation(rng)
    t = rng.normal(scale=10.0, size=3)
    dst = s * src @ R.T + t
    sim = umeyama_similarity(src, dst)
    assert abs(sim.scale - s) < 1e-9 * max(1.0, s)
    np.testing.assert_allclose(sim.R, R, atol=1e-9)
    np.testing.assert_allclose(sim.t, t, atol=1e-8)
    np.testing.assert_allclose(sim.apply(src), dst, atol=1e-8)


def test_umeyama_handles_reflection_free_case():
    # points nearly planar: solution must still be a proper rotation
    rng = np.random.default_rng(1)
    src = rng.normal(size=(20, 3))
    src[:, 2] *= 1e-3
    R = random_rotation(rng)
    dst = 2.0 * src @ R.T + 1.0
    sim = umeyama_similarity(src, dst)
    assert np.isclose(np.linalg.det(sim.R), 1.0, atol=1e-9)
    np.testing.assert_allclose(sim.apply(src), dst, atol=1e-6)


def test_umeyama_degenerate_inputs():
    with pytest.raises(DegenerateConfiguration):
        umeyama_similarity(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), np.array([1.0, 2.0, 3.0]))
    with pytest.raises(DegenerateConfiguration):
        umeyama_similarity(line, line * 2.0)
    same = np.ones((4, 3))
    with pytest.raises(DegenerateConfiguration):
        umeyama_similarity(same, same)


def test_umeyama_shape_validation():
    with pytest.raises(ValueError):
        umeyama_similarity(np.zeros((4, 3)), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        umeyama_similarity(np.zeros((4, 2)), np.zeros((4, 2)))
