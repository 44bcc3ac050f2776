"""Rotation and rigid-transform algebra.

Rotations are plain ``(3, 3)`` float arrays; rigid transforms are :class:`Pose`
values. Rotation vectors use the axis-angle convention ``r = theta * axis``
on the canonical branch ``|r| < pi``.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import AngleNearPi, DimensionMismatch

ROTATION_TOL = 1e-9
# |trace(R) + 1| below this means the angle is within ~1e-3 rad of pi.
PI_BRANCH_TOL = 1e-6


def hat(v):
    """Skew-symmetric matrix such that ``hat(v) @ w == cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def is_rotation(m, tol=ROTATION_TOL):
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return bool(
        np.all(np.abs(m.T @ m - np.eye(3)) <= tol)
        and abs(np.linalg.det(m) - 1.0) <= tol
    )


def project_to_so3(m):
    """Nearest rotation in the Frobenius sense (polar decomposition)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def so3_exp(r):
    """Rodrigues formula."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3,):
        raise DimensionMismatch(f"rotation vector must have shape (3,), got {r.shape}")
    theta2 = float(r @ r)
    k = hat(r)
    if theta2 < 1e-12:
        # Taylor terms; error O(theta^4) is below 1e-24 here
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * k + b * (k @ k)


def _angle_axis_parts(m):
    w = 0.5 * vee(m - m.T)  # sin(theta) * axis
    s = float(np.linalg.norm(w))
    c = 0.5 * (np.trace(m) - 1.0)
    return w, s, c


def so3_log(m):
    """Canonical-branch logarithm of a rotation matrix.

    Raises
    ------
    AngleNearPi
        If the rotation angle is so close to pi that the axis sign is
        ambiguous. Use :func:`so3_log_near` with a reference vector there.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise DimensionMismatch(f"rotation must have shape (3, 3), got {m.shape}")
    if abs(np.trace(m) + 1.0) < PI_BRANCH_TOL:
        raise AngleNearPi(
            f"rotation angle within branch tolerance of pi (trace={np.trace(m):.12f})"
        )
    w, s, c = _angle_axis_parts(m)
    theta = np.arctan2(s, c)
    if theta < 1e-6:
        return w * (1.0 + theta * theta / 6.0)
    return w * (theta / s)


def _robust_angle_axis(m):
    """Angle in [0, pi] and unit axis, valid also near pi (axis sign from the
    skew part when it is resolvable)."""
    w, s, c = _angle_axis_parts(m)
    theta = float(np.arctan2(s, c))
    if theta < 1e-6:
        return theta, (w / s if s > 0 else np.array([1.0, 0.0, 0.0]))
    if s > 1e-3:
        return theta, w / s
    # near pi: axis from the symmetric part, u u^T = (sym - c I) / (1 - c)
    uu = (0.5 * (m + m.T) - c * np.eye(3)) / (1.0 - c)
    i = int(np.argmax(np.diag(uu)))
    u = uu[:, i] / np.sqrt(max(uu[i, i], 1e-300))
    if u @ w < 0:
        u = -u
    return theta, u / np.linalg.norm(u)


def so3_log_near(m, ref=None):
    """Logarithm on the branch closest to ``ref``.

    Used to build continuous rotation-vector sequences whose norm may cross
    pi. With ``ref=None`` this is :func:`so3_log`.
    """
    if ref is None:
        return so3_log(m)
    ref = np.asarray(ref, dtype=float)
    theta, u = _robust_angle_axis(np.asarray(m, dtype=float))
    best = None
    best_d = np.inf
    for k in range(-2, 3):
        cand = (theta + 2.0 * np.pi * k) * u
        d = float(np.linalg.norm(cand - ref))
        if d < best_d:
            best, best_d = cand, d
    return best


def orientation_error(r_cur, r_goal):
    """``log(R^T R_G)``: rotation taking ``r_cur`` to ``r_goal`` in the current frame."""
    return so3_log(np.asarray(r_cur).T @ np.asarray(r_goal))


def geodesic_interp(r0, r1, s):
    """Point at fraction ``s`` along the geodesic from ``r0`` to ``r1``."""
    return r0 @ so3_exp(s * so3_log(r0.T @ r1))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``x_world = rot @ x_local + pos``."""

    rot: np.ndarray
    pos: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rot, dtype=float)
        pos = np.asarray(self.pos, dtype=float).reshape(-1)
        if rot.shape != (3, 3) or pos.shape != (3,):
            raise DimensionMismatch("Pose needs a (3, 3) rotation and a 3-vector")
        object.__setattr__(self, "rot", rot)
        object.__setattr__(self, "pos", pos)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, t):
        t = np.asarray(t, dtype=float)
        return cls(t[:3, :3], t[:3, 3])

    @classmethod
    def from_rotvec(cls, r, pos):
        return cls(so3_exp(r), pos)

    @classmethod
    def planar(cls, x, y, z=0.0, yaw=0.0):
        return cls(rot_z(yaw), [x, y, z])

    def as_matrix(self):
        t = np.eye(4)
        t[:3, :3] = self.rot
        t[:3, 3] = self.pos
        return t

    def __matmul__(self, other):
        return pose_compose(self, other)

    def inverse(self):
        return pose_inverse(self)

    def apply(self, points):
        """Map local points of shape (..., 3) to the parent frame."""
        return np.asarray(points) @ self.rot.T + self.pos

    def allclose(self, other, atol=1e-9):
        return bool(
            np.allclose(self.rot, other.rot, rtol=0, atol=atol)
            and np.allclose(self.pos, other.pos, rtol=0, atol=atol)
        )


def pose_compose(a, b):
    return Pose(a.rot @ b.rot, a.rot @ b.pos + a.pos)


def pose_inverse(a):
    rt = a.rot.T
    return Pose(rt, -rt @ a.pos)
