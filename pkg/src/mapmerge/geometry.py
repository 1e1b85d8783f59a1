"""Similarity / rigid transform algebra.

Convention used throughout the package: a transform maps points expressed in
its source frame to coordinates in its destination frame, and
``compose(a, b)`` applies ``b`` first.  A keyframe pose is therefore the
camera-to-world transform.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

TOL = 1e-9


def _frozen(a, shape):
    arr = np.array(a, dtype=float).reshape(shape)
    arr.setflags(write=False)
    return arr


def is_rotation(R, tol=TOL):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return (np.linalg.norm(R.T @ R - np.eye(3)) <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


def project_to_rotation(M):
    """Nearest rotation in the Frobenius sense (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def skew(v):
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def so3_exp(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return (np.eye(3) + np.sin(theta) / theta * K
            + (1 - np.cos(theta)) / theta**2 * K @ K)


def so3_log(R):
    return Rotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()


def _left_jacobian(phi):
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-8:
        return np.eye(3) + 0.5 * K + K @ K / 6.0
    return (np.eye(3) + (1 - np.cos(theta)) / theta**2 * K
            + (theta - np.sin(theta)) / theta**3 * K @ K)


def se3_exp(xi):
    """xi = (x, y, z, a, b, c): translational part first, then rotation vector."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[:3], xi[3:]
    return Sim3(so3_exp(phi), _left_jacobian(phi) @ rho, 1.0)


def se3_log(T):
    phi = so3_log(T.rotation)
    rho = np.linalg.solve(_left_jacobian(phi), T.translation)
    return np.concatenate([rho, phi])


@dataclass(frozen=True)
class FrameId:
    agent: str
    index: Optional[int]  # None is the agent's WORLD frame

    def __post_init__(self):
        if self.index is not None and self.index < 0:
            raise ValueError(f"keyframe index must be >= 0, got {self.index}")

    @classmethod
    def world(cls, agent):
        return cls(agent, None)

    @property
    def is_world(self):
        return self.index is None

    def __str__(self):
        return f"{self.agent}:{'W' if self.index is None else self.index}"


class Sim3:
    """x -> scale * R @ x + t.  Immutable; a rigid (SE(3)) transform has scale 1."""

    __slots__ = ("rotation", "translation", "scale")

    def __init__(self, rotation=None, translation=None, scale=1.0):
        R = np.eye(3) if rotation is None else rotation
        t = np.zeros(3) if translation is None else translation
        scale = float(scale)
        if not scale > 0 or not np.isfinite(scale):
            raise ValueError(f"scale must be positive and finite, got {scale}")
        object.__setattr__(self, "rotation", _frozen(R, (3, 3)))
        object.__setattr__(self, "translation", _frozen(t, (3,)))
        object.__setattr__(self, "scale", scale)

    def __setattr__(self, name, value):
        raise AttributeError("Sim3 is immutable")

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def pure_scale(cls, s):
        return cls(None, None, s)

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=float)
        A = M[:3, :3]
        s = np.cbrt(np.linalg.det(A))
        return cls(A / s, M[:3, 3], s)

    @classmethod
    def from_row_major(cls, values):
        values = list(values)
        if len(values) != 16:
            raise ValueError("expected 16 values")
        return cls.from_matrix(np.reshape(values, (4, 4)))

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.scale * self.rotation
        M[:3, 3] = self.translation
        return M

    def row_major(self):
        return [float(v) for v in self.matrix().ravel()]

    @property
    def is_rigid(self):
        return self.scale == 1.0

    def __matmul__(self, other):
        return compose(self, other)

    def inverse(self):
        return inverse(self)

    def apply(self, points):
        P = np.asarray(points, dtype=float)
        return self.scale * P @ self.rotation.T + self.translation

    def renormalized(self):
        return Sim3(project_to_rotation(self.rotation), self.translation, self.scale)

    def without_scale(self):
        return Sim3(self.rotation, self.translation, 1.0)

    def allclose(self, other, atol=TOL):
        return np.allclose(self.matrix(), other.matrix(), rtol=0.0, atol=atol)

    def __repr__(self):
        return (f"Sim3(scale={self.scale:.6g}, t={np.array2string(self.translation, precision=4)}, "
                f"rotvec={np.array2string(so3_log(self.rotation), precision=4)})")


def SE3(rotation=None, translation=None):
    return Sim3(rotation, translation, 1.0)


def compose(a, b):
    """a after b."""
    return Sim3(a.rotation @ b.rotation,
                a.scale * a.rotation @ b.translation + a.translation,
                a.scale * b.scale)


def inverse(t):
    Rt = t.rotation.T
    return Sim3(Rt, -(Rt @ t.translation) / t.scale, 1.0 / t.scale)


def transform_point(t, p):
    return t.scale * t.rotation @ np.asarray(p, dtype=float) + t.translation


def transform_cloud(t, cloud):
    """Apply ``t`` to an (N, 3) array; returns a new array of the same shape."""
    P = np.asarray(cloud, dtype=float).reshape(-1, 3)
    return t.apply(P)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_sim3(rng, scale_range=(0.2, 5.0), trans_scale=10.0):
    lo, hi = np.log(scale_range[0]), np.log(scale_range[1])
    return Sim3(random_rotation(rng), rng.normal(scale=trans_scale, size=3),
                float(np.exp(rng.uniform(lo, hi))))


def rotation_to_quaternion(R):
    """(qx, qy, qz, qw) with qw >= 0."""
    q = Rotation.from_matrix(np.asarray(R)).as_quat()
    return q if q[3] >= 0 else -q


def quaternion_to_rotation(q):
    return Rotation.from_quat(np.asarray(q, dtype=float)).as_matrix()


def umeyama(src, dst, with_scale=True):
    """Closed-form least-squares transform with dst ~ T(src).

    src, dst: (N, 3) corresponding points, N >= 3.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("umeyama expects two (N, 3) arrays of equal shape")
    n = len(src)
    if n < 3:
        raise ValueError("umeyama needs at least 3 correspondences")
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    C = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1
    R = U @ S @ Vt
    var_s = (xs**2).sum() / n
    s = float(np.trace(np.diag(D) @ S) / var_s) if with_scale else 1.0
    t = mu_d - s * R @ mu_s
    return Sim3(R, t, s)
