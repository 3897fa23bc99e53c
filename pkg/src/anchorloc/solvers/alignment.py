"""Closed-form least-squares similarity alignment of corresponded 3D points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geom import mat_to_quat, quat_to_mat
from .errors import DegenerateConfiguration


@dataclass
class SimilarityTransform:
    scale: float
    q: np.ndarray  # unit quaternion (w, x, y, z)
    t: np.ndarray

    @property
    def R(self):
        return quat_to_mat(self.q)

    def apply(self, pts):
        pts = np.asarray(pts, dtype=float)
        return self.scale * (pts @ self.R.T) + self.t


def umeyama_similarity(source, target) -> SimilarityTransform:
    """Least-squares (s, R, t) with target ~ s * R @ source + t.

    Requires >= 3 non-collinear point pairs.
    """
    x = np.asarray(source, dtype=float)
    y = np.asarray(target, dtype=float)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ValueError("source/target must be matching (n,3) arrays")
    n = x.shape[0]
    if n < 3:
        raise DegenerateConfiguration("need at least 3 point pairs")

    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    dx = x - mx
    dy = y - my

    var_x = (dx**2).sum() / n
    if var_x < 1e-18:
        raise DegenerateConfiguration("coincident source points")

    cov = dy.T @ dx / n
    U, d, Vt = np.linalg.svd(cov)
    # rank < 2 means the sources are collinear: rotation not determined
    if d[1] <= d[0] * 1e-12:
        raise DegenerateConfiguration("collinear source points")

    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float((d * S.diagonal()).sum() / var_x)
    t = my - s * R @ mx
    return SimilarityTransform(s, mat_to_quat(R), t)
