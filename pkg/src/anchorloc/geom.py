"""Pinhole camera model and SE(3) pose utilities.

Pose convention is world-to-camera everywhere: ``x_cam = R @ x_world + t``
with the rotation stored as a unit quaternion ``(w, x, y, z)``. Pose
increments are minimal 6-vectors ``(rotation tangent, translation)``
applied by left multiplication, so quaternions never enter the solvers'
parameter blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class BehindCamera(Exception):
    """The point has non-positive depth in the camera frame.

    Signals non-observability, not a fault.
    """


# ---------------------------------------------------------------------------
# quaternion helpers


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    q = q / n
    # canonical sign keeps serialization deterministic
    if q[0] < 0.0:
        q = -q
    return q


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_mat(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def mat_to_quat(R):
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def so3_exp_quat(w):
    """Axis-angle 3-vector -> unit quaternion."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        q = np.array([1.0, 0.5 * w[0], 0.5 * w[1], 0.5 * w[2]])
        return quat_normalize(q)
    axis = w / theta
    half = 0.5 * theta
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def rotation_angle(Ra, Rb):
    """Geodesic angle (rad) between two rotation matrices."""
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


# ---------------------------------------------------------------------------
# domain types


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor size must be positive")

    @property
    def K(self):
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def in_bounds(self, uv):
        uv = np.atleast_2d(uv)
        return (
            (uv[:, 0] >= 0)
            & (uv[:, 0] <= self.width - 1)
            & (uv[:, 1] >= 0)
            & (uv[:, 1] <= self.height - 1)
        )


@dataclass
class Pose:
    """World-to-camera rigid transform."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.q = quat_normalize(self.q)
        self.t = np.asarray(self.t, dtype=float).copy()

    @staticmethod
    def identity():
        return Pose()

    @staticmethod
    def from_rt(R, t):
        return Pose(mat_to_quat(R), np.asarray(t, dtype=float))

    @property
    def R(self):
        return quat_to_mat(self.q)

    def apply(self, p):
        """Map world point(s) into the camera frame."""
        p = np.asarray(p, dtype=float)
        return p @ self.R.T + self.t

    def compose(self, other: "Pose") -> "Pose":
        """self o other: applies other first, then self."""
        return Pose(quat_mul(self.q, other.q), self.R @ other.t + self.t)

    def inverse(self) -> "Pose":
        Rt = self.R.T
        return Pose(quat_conj(self.q), -Rt @ self.t)

    def center(self):
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def view_direction(self):
        """Optical axis direction in world coordinates."""
        return self.R.T @ np.array([0.0, 0.0, 1.0])

    def retract(self, delta) -> "Pose":
        """Left-multiply by exp of a (rot tangent, translation) 6-vector."""
        delta = np.asarray(delta, dtype=float)
        dq = so3_exp_quat(delta[:3])
        dR = quat_to_mat(dq)
        return Pose(quat_mul(dq, self.q), dR @ self.t + delta[3:])

    def copy(self) -> "Pose":
        return Pose(self.q.copy(), self.t.copy())


def poses_close(a: Pose, b: Pose, rot_tol=1e-9, trans_tol=1e-9):
    return rotation_angle(a.R, b.R) <= rot_tol and np.all(np.abs(a.t - b.t) <= trans_tol)


# ---------------------------------------------------------------------------
# projection


def project(intr: CameraIntrinsics, pose: Pose, p):
    """Project a world point; raises BehindCamera when depth <= 0."""
    q = pose.apply(np.asarray(p, dtype=float))
    if q[2] <= 0.0:
        raise BehindCamera(f"depth {q[2]:g} <= 0")
    return np.array(
        [intr.fx * q[0] / q[2] + intr.cx, intr.fy * q[1] / q[2] + intr.cy]
    )


def reprojection_residual(intr, pose, p, obs):
    """project(p) - obs, in pixels. Propagates BehindCamera."""
    return project(intr, pose, p) - np.asarray(obs, dtype=float)


def residual_jacobian(intr, pose, p):
    """Analytic derivative blocks of the reprojection residual.

    Returns (2x6 pose block, 2x3 point block). The pose block is taken
    w.r.t. a left-multiplied (rot tangent, translation) increment.
    """
    R = pose.R
    q = pose.apply(np.asarray(p, dtype=float))
    X, Y, Z = q
    if Z <= 0.0:
        raise BehindCamera(f"depth {Z:g} <= 0")
    # d(u,v)/d(cam point)
    Jproj = np.array(
        [
            [intr.fx / Z, 0.0, -intr.fx * X / Z**2],
            [0.0, intr.fy / Z, -intr.fy * Y / Z**2],
        ]
    )
    # cam point w.r.t. increment: d/d(rot) = -[q]_x, d/d(trans) = I
    skew = np.array([[0.0, -Z, Y], [Z, 0.0, -X], [-Y, X, 0.0]])
    Jpose = np.hstack([Jproj @ (-skew), Jproj])
    Jpoint = Jproj @ R
    return Jpose, Jpoint


# ---------------------------------------------------------------------------
# vectorized forms used by the solvers


def project_many(R, t, intr, pts):
    """Project (n,3) points; returns ((n,2) pixels, (n,) depths).

    Pixels for non-positive depths are garbage; callers must gate on z.
    """
    q = pts @ R.T + t
    z = q[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack(
            [intr.fx * q[:, 0] / z + intr.cx, intr.fy * q[:, 1] / z + intr.cy], axis=1
        )
    return uv, z
