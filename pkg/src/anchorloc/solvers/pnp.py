"""Minimal P3P solver and robust PnP via RANSAC with LM pose refinement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geom import CameraIntrinsics, Pose, mat_to_quat, project_many, residual_jacobian
from .errors import DegenerateConfiguration, InsufficientCorrespondences, NoConsensus


@dataclass
class Correspondence2D3D:
    pixel: np.ndarray
    point_id: int
    world: np.ndarray
    feature_index: int = -1
    distance: float = 0.0


@dataclass
class RansacConfig:
    max_iterations: int = 1000
    inlier_threshold: float = 4.0  # pixels
    min_inliers: int = 15
    confidence: float = 0.999
    rng_seed: int = 0

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0,1)")


def _bearing_vectors(pixels, intr: CameraIntrinsics):
    pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
    f = np.stack(
        [
            (pixels[:, 0] - intr.cx) / intr.fx,
            (pixels[:, 1] - intr.cy) / intr.fy,
            np.ones(len(pixels)),
        ],
        axis=1,
    )
    return f / np.linalg.norm(f, axis=1)[:, None]


def _rigid_from_three(world, cam):
    """Rigid transform with cam_i = R @ world_i + t (Kabsch on 3 points)."""
    mw = world.mean(axis=0)
    mc = cam.mean(axis=0)
    H = (cam - mc).T @ (world - mw)
    U, _, Vt = np.linalg.svd(H)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    t = mc - R @ mw
    return R, t


def _polish_quartic_root(coeffs, x, steps=2):
    # one or two Newton steps tighten np.roots output
    d = np.polyder(coeffs)
    for _ in range(steps):
        fx = np.polyval(coeffs, x)
        dfx = np.polyval(d, x)
        if abs(dfx) < 1e-300:
            break
        x = x - fx / dfx
    return x


def _polish_distances(s1, s2, s3, ca, cb, cg, a2, b2, c2, steps=3):
    """Gauss-Newton on the three law-of-cosines equations in (s1,s2,s3)."""
    s = np.array([s1, s2, s3], dtype=float)
    for _ in range(steps):
        r = np.array(
            [
                s[1] ** 2 + s[2] ** 2 - 2 * s[1] * s[2] * ca - a2,
                s[0] ** 2 + s[2] ** 2 - 2 * s[0] * s[2] * cb - b2,
                s[0] ** 2 + s[1] ** 2 - 2 * s[0] * s[1] * cg - c2,
            ]
        )
        J = np.array(
            [
                [0.0, 2 * s[1] - 2 * s[2] * ca, 2 * s[2] - 2 * s[1] * ca],
                [2 * s[0] - 2 * s[2] * cb, 0.0, 2 * s[2] - 2 * s[0] * cb],
                [2 * s[0] - 2 * s[1] * cg, 2 * s[1] - 2 * s[0] * cg, 0.0],
            ]
        )
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            break
        s_new = s - step
        if np.any(s_new <= 0):
            break
        s = s_new
        if np.max(np.abs(r)) < 1e-14:
            break
    return s[0], s[1], s[2]


def p3p_grunert(world, bearings):
    """Grunert's P3P: world (3,3) points, unit bearings (3,3) in camera frame.

    Returns a list of (R, t) with cam = R @ world + t, all three points in
    front of the camera.
    """
    P1, P2, P3 = world
    f1, f2, f3 = bearings

    a = np.linalg.norm(P2 - P3)
    b = np.linalg.norm(P1 - P3)
    c = np.linalg.norm(P1 - P2)
    if min(a, b, c) < 1e-12:
        raise DegenerateConfiguration("coincident world points")
    if np.linalg.norm(np.cross(P2 - P1, P3 - P1)) < 1e-12 * b * c:
        raise DegenerateConfiguration("collinear world points")

    ca = float(f2 @ f3)  # alpha opposite side a
    cb = float(f1 @ f3)
    cg = float(f1 @ f2)
    if max(abs(ca), abs(cb), abs(cg)) > 1.0 - 1e-12:
        raise DegenerateConfiguration("coincident bearing directions")

    a2, b2, c2 = a * a, b * b, c * c
    A = (a2 - c2) / b2
    B = (a2 + c2) / b2

    A4 = (A - 1.0) ** 2 - 4.0 * c2 / b2 * ca * ca
    A3 = 4.0 * (A * (1.0 - A) * cb - (1.0 - B) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb)
    A2 = 2.0 * (
        A * A
        - 1.0
        + 2.0 * A * A * cb * cb
        + 2.0 * (b2 - c2) / b2 * ca * ca
        - 4.0 * B * ca * cb * cg
        + 2.0 * (b2 - a2) / b2 * cg * cg
    )
    A1 = 4.0 * (-A * (1.0 + A) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - B) * ca * cg)
    A0 = (1.0 + A) ** 2 - 4.0 * a2 / b2 * cg * cg

    coeffs = np.array([A4, A3, A2, A1, A0])
    lead = np.max(np.abs(coeffs))
    if lead < 1e-300:
        raise DegenerateConfiguration("degenerate quartic")
    coeffs = coeffs / lead
    nz = np.nonzero(np.abs(coeffs) > 1e-14)[0]
    roots = np.roots(coeffs[nz[0] :])

    solutions = []
    for r in roots:
        if abs(r.imag) > 1e-6 * max(1.0, abs(r.real)):
            continue
        v = _polish_quartic_root(coeffs, float(r.real))
        denom = 2.0 * (cg - v * ca)
        if abs(denom) < 1e-12:
            continue
        u = ((A - 1.0) * v * v - 2.0 * A * cb * v + 1.0 + A) / denom
        s1sq = b2 / (1.0 + v * v - 2.0 * v * cb)
        if s1sq <= 0.0:
            continue
        s1 = np.sqrt(s1sq)
        s2 = u * s1
        s3 = v * s1
        if s1 <= 0.0 or s2 <= 0.0 or s3 <= 0.0:
            continue
        s1, s2, s3 = _polish_distances(s1, s2, s3, ca, cb, cg, a2, b2, c2)
        cam = np.array([s1 * f1, s2 * f2, s3 * f3])
        R, t = _rigid_from_three(world, cam)
        solutions.append((R, t))
    return solutions


def solve_p3p(corrs, intr: CameraIntrinsics, residual_tol=1e-4):
    """P3P on exactly 3 correspondences.

    Returns the candidate poses (up to 4) that reproject all three input
    points within residual_tol pixels and keep them in front of the camera.
    """
    if len(corrs) != 3:
        raise ValueError("solve_p3p takes exactly 3 correspondences")
    world = np.array([c.world for c in corrs], dtype=float)
    pixels = np.array([c.pixel for c in corrs], dtype=float)
    bearings = _bearing_vectors(pixels, intr)

    candidates = []
    for R, t in p3p_grunert(world, bearings):
        uv, z = project_many(R, t, intr, world)
        if np.any(z <= 0):
            continue
        if np.max(np.linalg.norm(uv - pixels, axis=1)) > residual_tol:
            continue
        candidates.append(Pose(mat_to_quat(R), t))
    return candidates


def refine_pose(pose: Pose, world, pixels, intr: CameraIntrinsics, iterations=10):
    """Pose-only Levenberg-Marquardt on the given correspondences."""
    world = np.asarray(world, dtype=float)
    pixels = np.asarray(pixels, dtype=float)
    lam = 1e-6

    def cost_of(p):
        uv, z = project_many(p.R, p.t, intr, world)
        r = uv - pixels
        bad = z <= 0
        r[bad] = 1e6
        return float((r**2).sum()), r

    cost, _ = cost_of(pose)
    for _ in range(iterations):
        J = np.zeros((len(world), 2, 6))
        r = np.zeros((len(world), 2))
        ok = np.ones(len(world), dtype=bool)
        for i, (X, uv) in enumerate(zip(world, pixels)):
            q = pose.apply(X)
            if q[2] <= 0:
                ok[i] = False
                continue
            Jp, _ = residual_jacobian(intr, pose, X)
            J[i] = Jp
            r[i] = np.array(
                [intr.fx * q[0] / q[2] + intr.cx, intr.fy * q[1] / q[2] + intr.cy]
            ) - uv
        Jf = J[ok].reshape(-1, 6)
        rf = r[ok].reshape(-1)
        H = Jf.T @ Jf
        g = Jf.T @ rf
        if np.max(np.abs(g)) < 1e-14:
            break
        stepped = False
        for _ in range(8):
            try:
                delta = np.linalg.solve(H + lam * np.diag(np.diag(H)) + 1e-18 * np.eye(6), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = pose.retract(delta)
            new_cost, _ = cost_of(trial)
            if new_cost <= cost:
                pose = trial
                improved = cost - new_cost
                cost = new_cost
                lam = max(lam / 10.0, 1e-12)
                stepped = True
                if improved < 1e-16 * max(cost, 1.0):
                    return pose
                break
            lam *= 10.0
        if not stepped:
            break
    return pose


def ransac_pnp(corrs, intr: CameraIntrinsics, cfg: RansacConfig):
    """Robust pose from 2D-3D correspondences.

    Deterministic given cfg.rng_seed. Returns (pose, sorted inlier indices).
    Raises InsufficientCorrespondences (< 4 inputs) or NoConsensus when the
    best consensus set is smaller than cfg.min_inliers.
    """
    n = len(corrs)
    if n < 4:
        raise InsufficientCorrespondences(f"{n} < 4 correspondences")
    world = np.array([c.world for c in corrs], dtype=float)
    pixels = np.array([c.pixel for c in corrs], dtype=float)
    rng = np.random.default_rng(cfg.rng_seed)
    thresh_sq = cfg.inlier_threshold**2

    def score(pose):
        uv, z = project_many(pose.R, pose.t, intr, world)
        err = ((uv - pixels) ** 2).sum(axis=1)
        mask = (z > 0) & (err < thresh_sq)
        return mask

    best_mask = None
    best_count = 0
    best_pose = None
    max_iter = cfg.max_iterations
    it = 0
    while it < max_iter:
        it += 1
        idx = rng.choice(n, size=3, replace=False)
        sample = [corrs[i] for i in idx]
        try:
            candidates = solve_p3p(sample, intr)
        except DegenerateConfiguration:
            continue
        for pose in candidates:
            mask = score(pose)
            count = int(mask.sum())
            if count > best_count:
                best_count = count
                best_mask = mask
                best_pose = pose
                # adaptive stopping on the inlier ratio
                w = count / n
                if w >= 1.0:
                    max_iter = it
                else:
                    denom = np.log1p(-min(w**3, 1.0 - 1e-15))
                    need = np.ceil(np.log(1.0 - cfg.confidence) / denom)
                    need = cfg.max_iterations if not np.isfinite(need) else int(need)
                    max_iter = min(cfg.max_iterations, max(need, it))

    if best_pose is None or best_count < cfg.min_inliers:
        raise NoConsensus(f"best inlier count {best_count} < {cfg.min_inliers}")

    pose = refine_pose(best_pose, world[best_mask], pixels[best_mask], intr)
    mask = score(pose)
    if int(mask.sum()) < best_count:
        # refinement must not lose consensus; fall back
        pose = best_pose
        mask = best_mask
    inliers = np.nonzero(mask)[0]
    return pose, inliers
