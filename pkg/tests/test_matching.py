import numpy as np
import pytest

from anchorloc.matching import (
    EmptyFeatureSet,
    FeatureSet,
    global_descriptor,
    match_features,
    retrieve_top_k,
    temporal_candidates,
)


def _unit_rows(rng, n, d=8):
    m = rng.normal(size=(n, d))
    return m / np.linalg.norm(m, axis=1)[:, None]


def _fs(rng, n, d=8):
    return FeatureSet(rng.uniform(0, 100, (n, 2)), _unit_rows(rng, n, d))


def test_match_identity():
    rng = np.random.default_rng(0)
    a = _fs(rng, 30)
    pairs = match_features(a, a, 0.8, True)
    assert len(pairs) == 30
    assert all(m.query_index == m.target_index and m.distance < 1e-6 for m in pairs)


def test_match_ratio_rejects_ambiguous():
    rng = np.random.default_rng(1)
    a = _fs(rng, 5)
    # duplicate every target descriptor: second-nearest ties the nearest
    b = FeatureSet(
        np.vstack([a.pixels, a.pixels]), np.vstack([a.descriptors, a.descriptors])
    )
    assert match_features(a, b, 0.8, False) == []


def test_match_mutual_check():
    # two queries share one nearest target; only the closer one survives
    qa = np.array([[1.0, 0.0, 0.0], [np.cos(0.1), np.sin(0.1), 0.0]])
    tb = np.array([[np.cos(0.02), np.sin(0.02), 0.0], [0.0, 0.0, 1.0]])
    a = FeatureSet(np.zeros((2, 2)), qa)
    b = FeatureSet(np.zeros((2, 2)), tb)
    pairs = match_features(a, b, 1.0, True)
    assert [(m.query_index, m.target_index) for m in pairs] == [(0, 0)]


def test_match_sorted_by_distance():
    rng = np.random.default_rng(2)
    a = _fs(rng, 40)
    noisy = a.descriptors + rng.normal(scale=0.02, size=a.descriptors.shape)
    b = FeatureSet(a.pixels, noisy / np.linalg.norm(noisy, axis=1)[:, None])
    pairs = match_features(a, b, 0.9, True)
    dists = [m.distance for m in pairs]
    assert dists == sorted(dists)


def test_match_empty_inputs():
    rng = np.random.default_rng(3)
    a = _fs(rng, 4)
    assert match_features(a, FeatureSet.empty(8), 0.8, True) == []
    assert match_features(FeatureSet.empty(8), a, 0.8, True) == []


def test_match_ratio_validation():
    rng = np.random.default_rng(4)
    a = _fs(rng, 3)
    with pytest.raises(ValueError):
        match_features(a, a, 0.0, True)
    with pytest.raises(ValueError):
        match_features(a, a, 1.5, True)


def test_planted_matches_recall_precision():
    # planted correspondences with descriptor noise sigma=0.05, ratio 0.8
    rng = np.random.default_rng(5)
    base = _unit_rows(rng, 200, 32)
    na = base + rng.normal(scale=0.05, size=base.shape)
    nb = base + rng.normal(scale=0.05, size=base.shape)
    a = FeatureSet(np.zeros((200, 2)), na / np.linalg.norm(na, axis=1)[:, None])
    b = FeatureSet(np.zeros((200, 2)), nb / np.linalg.norm(nb, axis=1)[:, None])
    pairs = match_features(a, b, 0.8, True)
    correct = sum(1 for m in pairs if m.query_index == m.target_index)
    assert correct / 200 >= 0.9  # recall
    assert correct / len(pairs) >= 0.95  # precision


def test_global_descriptor_basics():
    rng = np.random.default_rng(6)
    f = _fs(rng, 10)
    g = global_descriptor(f)
    assert np.isclose(np.linalg.norm(g), 1.0)
    # permutation invariance
    perm = rng.permutation(10)
    g2 = global_descriptor(FeatureSet(f.pixels[perm], f.descriptors[perm]))
    np.testing.assert_allclose(g, g2, atol=1e-12)


def test_global_descriptor_degenerate_mean():
    d = np.array([[1.0, 0.0], [-1.0, 0.0]])
    g = global_descriptor(FeatureSet(np.zeros((2, 2)), d))
    np.testing.assert_allclose(g, d[0])
    with pytest.raises(EmptyFeatureSet):
        global_descriptor(FeatureSet.empty(2))


def test_retrieve_top_k_matches_exhaustive_sort():
    rng = np.random.default_rng(7)
    q = _unit_rows(rng, 1, 16)[0]
    db = [(i, _unit_rows(rng, 1, 16)[0]) for i in range(50)]
    got = retrieve_top_k(q, db, 10)
    want = sorted(range(50), key=lambda i: (-float(db[i][1] @ q), i))[:10]
    assert got == want


def test_retrieve_top_k_ties_and_overflow():
    d = np.array([1.0, 0.0])
    db = [(7, d.copy()), (3, d.copy()), (9, d.copy())]
    assert retrieve_top_k(d, db, 2) == [3, 7]
    assert retrieve_top_k(d, db, 99) == [3, 7, 9]
    assert retrieve_top_k(d, [], 4) == []
    with pytest.raises(ValueError):
        retrieve_top_k(d, db, 0)


class _F:
    def __init__(self, fid, ts, status):
        self.id, self.timestamp, self.status = fid, ts, status


def test_temporal_candidates_window():
    frames = [_F(i, float(i), "registered") for i in range(10)]
    frames[4].status = "failed"
    frames[6].status = "pending"
    got = temporal_candidates(8.0, frames, 3)
    assert got == [7, 5, 3]  # most recent first, failures skipped


def test_temporal_candidates_reverse_and_exclusion():
    frames = [_F(i, float(i), "anchor") for i in range(6)]
    got = temporal_candidates(2.0, frames, 2, reverse=True)
    assert got == [3, 4]
    assert 2 not in temporal_candidates(2.0, frames, 10)
    assert temporal_candidates(0.0, frames, 5) == []
