"""Two-view relative pose via normalized eight-point essential estimation."""

from __future__ import annotations

import numpy as np

from ..geom import CameraIntrinsics, Pose, mat_to_quat
from .errors import DegenerateConfiguration, InsufficientCorrespondences, NoConsensus
from .pnp import RansacConfig, _bearing_vectors


def _essential_from_eight(x1, x2):
    """Linear essential estimate from normalized image points (n>=8, 2D)."""
    n = len(x1)
    A = np.column_stack(
        [
            x2[:, 0] * x1[:, 0],
            x2[:, 0] * x1[:, 1],
            x2[:, 0],
            x2[:, 1] * x1[:, 0],
            x2[:, 1] * x1[:, 1],
            x2[:, 1],
            x1[:, 0],
            x1[:, 1],
            np.ones(n),
        ]
    )
    _, _, Vt = np.linalg.svd(A)
    E = Vt[-1].reshape(3, 3)
    U, s, Vt = np.linalg.svd(E)
    sig = (s[0] + s[1]) / 2.0
    return U @ np.diag([sig, sig, 0.0]) @ Vt


def _sampson_sq(E, x1, x2):
    x1h = np.column_stack([x1, np.ones(len(x1))])
    x2h = np.column_stack([x2, np.ones(len(x2))])
    Ex1 = x1h @ E.T
    Etx2 = x2h @ E
    num = np.einsum("ij,ij->i", x2h, Ex1) ** 2
    den = Ex1[:, 0] ** 2 + Ex1[:, 1] ** 2 + Etx2[:, 0] ** 2 + Etx2[:, 1] ** 2
    return num / np.maximum(den, 1e-18)


def _midpoint_depths(R, t, x1, x2):
    """Depths of the midpoint triangulation in both views, vectorized."""
    f1 = np.column_stack([x1, np.ones(len(x1))])
    f2 = np.column_stack([x2, np.ones(len(x2))])
    # solve for z1, z2 with z2 * f2 = R (z1 * f1) + t per correspondence
    Rf1 = f1 @ R.T
    z1 = np.zeros(len(x1))
    z2 = np.zeros(len(x1))
    for i in range(len(x1)):
        A = np.column_stack([Rf1[i], -f2[i]])
        sol, *_ = np.linalg.lstsq(A, -t, rcond=None)
        z1[i], z2[i] = sol
    return z1, z2


def _decompose_essential(E, x1, x2):
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = U[:, 2]
    t = t / np.linalg.norm(t)
    best = None
    best_front = -1
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        for tt in (t, -t):
            z1, z2 = _midpoint_depths(R, tt, x1, x2)
            front = int(((z1 > 0) & (z2 > 0)).sum())
            if front > best_front:
                best_front = front
                best = (R, tt)
    return best, best_front


def _sampson_residuals(R, t, x1, x2):
    tx = np.array([[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]])
    E = tx @ R
    x1h = np.column_stack([x1, np.ones(len(x1))])
    x2h = np.column_stack([x2, np.ones(len(x2))])
    Ex1 = x1h @ E.T
    Etx2 = x2h @ E
    num = np.einsum("ij,ij->i", x2h, Ex1)
    den = np.sqrt(Ex1[:, 0] ** 2 + Ex1[:, 1] ** 2 + Etx2[:, 0] ** 2 + Etx2[:, 1] ** 2)
    return num / np.maximum(den, 1e-18)


def refine_relative_pose(pose: Pose, pixels1, pixels2, intr: CameraIntrinsics, iterations=30):
    """Gauss-Newton on Sampson error over the 5-dof relative pose.

    The linear eight-point estimate degrades badly on shallow-relief
    (near-planar) geometry; this polishes it on the given inlier matches.
    Translation stays unit-norm.
    """
    from ..geom import quat_to_mat, so3_exp_quat

    b1 = _bearing_vectors(np.asarray(pixels1, dtype=float), intr)
    b2 = _bearing_vectors(np.asarray(pixels2, dtype=float), intr)
    x1 = b1[:, :2] / b1[:, 2:3]
    x2 = b2[:, :2] / b2[:, 2:3]

    R = pose.R
    t = pose.t / np.linalg.norm(pose.t)
    r = _sampson_residuals(R, t, x1, x2)
    cost = float(r @ r)
    lam = 1e-4
    eps = 1e-7
    for _ in range(iterations):
        # numeric jacobian: 3 rotation params, 2 in the tangent of the
        # unit translation sphere
        U, _, _ = np.linalg.svd(np.eye(3) - np.outer(t, t))
        B = U[:, :2]
        J = np.zeros((len(x1), 5))
        for p in range(3):
            d = np.zeros(3)
            d[p] = eps
            J[:, p] = (_sampson_residuals(quat_to_mat(so3_exp_quat(d)) @ R, t, x1, x2) - r) / eps
        for p in range(2):
            tp = t + eps * B[:, p]
            tp = tp / np.linalg.norm(tp)
            J[:, 3 + p] = (_sampson_residuals(R, tp, x1, x2) - r) / eps
        H = J.T @ J
        g = J.T @ r
        if np.max(np.abs(g)) < 1e-14:
            break
        stepped = False
        for _ in range(8):
            try:
                step = np.linalg.solve(H + lam * np.diag(np.diag(H)) + 1e-15 * np.eye(5), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            Rn = quat_to_mat(so3_exp_quat(step[:3])) @ R
            tn = t + B @ step[3:]
            tn = tn / np.linalg.norm(tn)
            rn = _sampson_residuals(Rn, tn, x1, x2)
            cn = float(rn @ rn)
            if cn < cost:
                R, t, r, cost = Rn, tn, rn, cn
                lam = max(lam / 10.0, 1e-10)
                stepped = True
                break
            lam *= 10.0
        if not stepped:
            break
    return Pose(mat_to_quat(R), t)


def epipolar_inlier_indices(pose: Pose, pixels1, pixels2, intr: CameraIntrinsics, threshold_px):
    """Indices of matches whose Sampson error under the given relative
    pose is below threshold_px (first-order pixel units)."""
    b1 = _bearing_vectors(np.asarray(pixels1, dtype=float), intr)
    b2 = _bearing_vectors(np.asarray(pixels2, dtype=float), intr)
    x1 = b1[:, :2] / b1[:, 2:3]
    x2 = b2[:, :2] / b2[:, 2:3]
    t = pose.t / np.linalg.norm(pose.t)
    r = _sampson_residuals(pose.R, t, x1, x2)
    f = (intr.fx + intr.fy) / 2.0
    return np.nonzero(np.abs(r) * f < threshold_px)[0]


def estimate_relative_pose(pixels1, pixels2, intr: CameraIntrinsics, cfg: RansacConfig):
    """Relative pose of view 2 w.r.t. view 1, translation unit-norm.

    pixels1/pixels2 are matching (n,2) arrays with n >= 8. The returned
    Pose maps view-1 camera coordinates into view 2. Deterministic given
    cfg.rng_seed.
    """
    pixels1 = np.asarray(pixels1, dtype=float)
    pixels2 = np.asarray(pixels2, dtype=float)
    n = len(pixels1)
    if n < 8:
        raise InsufficientCorrespondences(f"{n} < 8 matches")

    # normalized image coordinates
    b1 = _bearing_vectors(pixels1, intr)
    b2 = _bearing_vectors(pixels2, intr)
    x1 = b1[:, :2] / b1[:, 2:3]
    x2 = b2[:, :2] / b2[:, 2:3]

    f = (intr.fx + intr.fy) / 2.0
    thresh = (cfg.inlier_threshold / f) ** 2

    rng = np.random.default_rng(cfg.rng_seed)
    best_mask = None
    best_count = 0
    max_iter = cfg.max_iterations
    it = 0
    while it < max_iter:
        it += 1
        idx = rng.choice(n, size=8, replace=False)
        E = _essential_from_eight(x1[idx], x2[idx])
        mask = _sampson_sq(E, x1, x2) < thresh
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            w = count / n
            if w >= 1.0:
                max_iter = it
            else:
                denom = np.log1p(-min(w**8, 1.0 - 1e-15))
                need = np.ceil(np.log(1.0 - cfg.confidence) / denom)
                need = cfg.max_iterations if not np.isfinite(need) else int(need)
                max_iter = min(cfg.max_iterations, max(need, it))

    if best_mask is None or best_count < max(cfg.min_inliers, 8):
        raise NoConsensus(f"best inlier count {best_count}")

    E = _essential_from_eight(x1[best_mask], x2[best_mask])
    mask = _sampson_sq(E, x1, x2) < thresh
    if int(mask.sum()) < best_count:
        mask = best_mask
    (R, t), front = _decompose_essential(E, x1[mask], x2[mask])
    if front < 0.5 * int(mask.sum()):
        raise DegenerateConfiguration("cheirality vote inconclusive")

    # low-parallax / pure-rotation gate: triangulated rays nearly parallel
    z1, z2 = _midpoint_depths(R, t, x1[mask], x2[mask])
    good = (z1 > 0) & (z2 > 0)
    if good.sum() >= 2:
        f1 = np.column_stack([x1[mask], np.ones(int(mask.sum()))])
        pts1 = f1[good] * z1[good][:, None]
        c2 = -R.T @ t  # second center in view-1 frame
        r1 = pts1 / np.linalg.norm(pts1, axis=1)[:, None]
        r2 = pts1 - c2
        r2 = r2 / np.linalg.norm(r2, axis=1)[:, None]
        ang = np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", r1, r2), -1, 1)))
        if np.median(ang) < 0.1:
            raise DegenerateConfiguration("insufficient parallax (near-pure rotation)")

    pose = Pose(mat_to_quat(R), t)
    return pose, np.nonzero(mask)[0]
