"""Descriptor matching, retrieval, and candidate-frame selection.

Descriptors are unit-norm D-vectors; distances are Euclidean, which is
monotone in cosine similarity on the unit sphere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmptyFeatureSet(Exception):
    pass


@dataclass
class FeatureSet:
    """Per-frame keypoints: (n,2) pixel array plus (n,D) unit descriptors."""

    pixels: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        d = np.asarray(self.descriptors, dtype=float)
        if d.ndim != 2:
            d = d.reshape(len(self.pixels), -1) if len(self.pixels) else d.reshape(0, 0)
        self.descriptors = d

    def __len__(self):
        return len(self.pixels)

    @staticmethod
    def empty(dim=32):
        return FeatureSet(np.zeros((0, 2)), np.zeros((0, dim)))


@dataclass
class MatchPair:
    query_index: int
    target_index: int
    distance: float


def _distance_matrix(a, b):
    # |a-b|^2 = |a|^2 + |b|^2 - 2 a.b ; descriptors are unit norm but noise
    # renormalization keeps this exact regardless
    d2 = (a**2).sum(axis=1)[:, None] + (b**2).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.sqrt(np.maximum(d2, 0.0))


def match_features(a: FeatureSet, b: FeatureSet, ratio=0.8, mutual=True):
    """Nearest-neighbor matches from a to b passing Lowe's ratio test.

    Returns MatchPairs sorted by ascending distance. With mutual=True a
    match is kept only when the target's nearest neighbor is the query.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must be in (0,1]")
    if len(a) == 0 or len(b) == 0:
        return []
    D = _distance_matrix(a.descriptors, b.descriptors)
    nn = np.argmin(D, axis=1)
    nn_dist = D[np.arange(len(a)), nn]
    if D.shape[1] >= 2:
        part = np.partition(D, 1, axis=1)
        second = part[:, 1]
    else:
        second = np.full(len(a), np.inf)
    ok = nn_dist < ratio * second
    if mutual:
        back = np.argmin(D, axis=0)
        ok &= back[nn] == np.arange(len(a))
    pairs = [MatchPair(int(i), int(nn[i]), float(nn_dist[i])) for i in np.nonzero(ok)[0]]
    pairs.sort(key=lambda m: (m.distance, m.query_index))
    return pairs


def global_descriptor(f: FeatureSet):
    """Unit-normalized mean of the local descriptors.

    Falls back to the first descriptor when the mean direction vanishes.
    """
    if len(f) == 0:
        raise EmptyFeatureSet("no features")
    m = f.descriptors.mean(axis=0)
    n = np.linalg.norm(m)
    if n < 1e-12:
        return f.descriptors[0].copy()
    return m / n


def retrieve_top_k(query, database, k):
    """Frame ids of the k database entries with largest inner product.

    database: list of (frame id, descriptor). Ties break toward the
    smaller frame id, making the result deterministic.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not database:
        return []
    ids = np.array([fid for fid, _ in database])
    descs = np.array([d for _, d in database])
    scores = descs @ np.asarray(query, dtype=float)
    order = np.lexsort((ids, -scores))
    return [int(ids[i]) for i in order[:k]]


def temporal_candidates(current_timestamp, frames, n, reverse=False):
    """The n most recent registered/anchor frames strictly before current.

    frames: iterable of objects with .id, .timestamp, .status. With
    reverse=True the window mirrors to frames strictly after the current
    timestamp (used by the backward localization pass).
    """
    if reverse:
        eligible = [f for f in frames if f.timestamp > current_timestamp]
        eligible.sort(key=lambda f: (f.timestamp, f.id))
    else:
        eligible = [f for f in frames if f.timestamp < current_timestamp]
        eligible.sort(key=lambda f: (-f.timestamp, f.id))
    out = []
    for f in eligible:
        if f.status in ("anchor", "registered"):
            out.append(f.id)
            if len(out) == n:
                break
    return out
