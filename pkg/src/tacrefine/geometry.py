"""Rigid-body helpers: quaternions (w, x, y, z), Euler R6 poses and transforms.

Euler angles follow the extrinsic x-y-z convention, i.e. the rotation matrix is
``Rz(yaw) @ Ry(pitch) @ Rx(roll)``. R6 pose vectors are ordered
``(x, y, z, roll, pitch, yaw)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

QUAT_TOL = 1e-9


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    return w if np.ndim(w) else float(w)


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError("cannot normalize a zero or non-finite quaternion")
    return q / n


def quat_mul(a, b):
    w0, x0, y0, z0 = a
    w1, x1, y1, z1 = b
    return np.array([
        w0 * w1 - x0 * x1 - y0 * y1 - z0 * z1,
        w0 * x1 + x0 * w1 + y0 * z1 - z0 * y1,
        w0 * y1 - x0 * z1 + y0 * w1 + z0 * x1,
        w0 * z1 + x0 * y1 - y0 * x1 + z0 * w1,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=np.float64)


def quat_from_euler(roll, pitch, yaw):
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    q = np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])
    return quat_normalize(q)


def euler_from_quat(q):
    """Inverse of :func:`quat_from_euler`; pitch is clipped to [-pi/2, pi/2]."""
    w, x, y, z = quat_normalize(q)
    roll = math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    sp = max(-1.0, min(1.0, 2 * (w * y - z * x)))
    pitch = math.asin(sp)
    yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return roll, pitch, yaw


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m):
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = quat_normalize(q)
    return q if q[0] >= 0 else -q


def axis_rotation(axis, angle):
    """Rotation matrix about a unit axis (Rodrigues)."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


@dataclass(frozen=True)
class Transform:
    """Rigid transform mapping local coordinates into the parent frame."""

    pos: np.ndarray
    rot: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.eye(3))

    def apply(self, pts):
        return np.asarray(pts) @ self.rot.T + self.pos

    def inverse_apply(self, pts):
        return (np.asarray(pts) - self.pos) @ self.rot

    def compose(self, other: "Transform") -> "Transform":
        """``self * other``: express ``other`` (given in self's frame) in the parent frame."""
        return Transform(self.rot @ other.pos + self.pos, self.rot @ other.rot)

    def inverse(self) -> "Transform":
        return Transform(-(self.rot.T @ self.pos), self.rot.T.copy())

    def __eq__(self, other):
        return (isinstance(other, Transform) and np.array_equal(self.pos, other.pos)
                and np.array_equal(self.rot, other.rot))

    __hash__ = None


@dataclass(frozen=True)
class WristPose:
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z)

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        q = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(q))):
            raise ValueError("wrist pose must be finite")
        if abs(np.linalg.norm(q) - 1.0) > QUAT_TOL:
            q = quat_normalize(q)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def from_r6(cls, r6) -> "WristPose":
        x, y, z, roll, pitch, yaw = (float(v) for v in r6)
        return cls(np.array([x, y, z]), quat_from_euler(roll, pitch, yaw))

    def to_r6(self) -> np.ndarray:
        return np.concatenate([self.position, euler_from_quat(self.orientation)])

    def transform(self) -> Transform:
        return Transform(self.position, quat_to_matrix(self.orientation))

    @classmethod
    def from_transform(cls, tf: Transform) -> "WristPose":
        return cls(tf.pos, matrix_to_quat(tf.rot))

    def __eq__(self, other):
        return (isinstance(other, WristPose) and np.array_equal(self.position, other.position)
                and np.array_equal(self.orientation, other.orientation))

    __hash__ = None


def r6_to_transform(r6) -> Transform:
    return WristPose.from_r6(r6).transform()


def apply_increment(r6, delta):
    """Add an R6 increment; translation in the world frame, angles as Euler offsets."""
    out = np.asarray(r6, dtype=np.float64) + np.asarray(delta, dtype=np.float64)
    out[3:] = wrap_angle(out[3:])
    return out


def r6_difference(target, current):
    """Componentwise ``target - current`` with angles wrapped to (-pi, pi]."""
    d = np.asarray(target, dtype=np.float64) - np.asarray(current, dtype=np.float64)
    d[..., 3:] = wrap_angle(d[..., 3:])
    return d
