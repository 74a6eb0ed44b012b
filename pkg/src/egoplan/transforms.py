"""Quaternion and rigid-transform primitives.

Rotations are unit quaternions in [w, x, y, z] order. All functions
broadcast over leading axes, so kinematics can evaluate a whole
trajectory of frames in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Tolerance on |q| - 1 accepted by Pose.
UNIT_QUAT_TOL = 1e-9


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, broadcasting over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v by quaternions q (broadcasting).

    Explicit component form of v + 2w(u x v) + 2u x (u x v); np.cross
    carries too much per-call overhead for the FK inner loop.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., 0]
    ux, uy, uz = q[..., 1], q[..., 2], q[..., 3]
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    tx = 2.0 * (uy * vz - uz * vy)
    ty = 2.0 * (uz * vx - ux * vz)
    tz = 2.0 * (ux * vy - uy * vx)
    return np.stack(
        [
            vx + w * tx + (uy * tz - uz * ty),
            vy + w * ty + (uz * tx - ux * tz),
            vz + w * tz + (ux * ty - uy * tx),
        ],
        axis=-1,
    )


def quat_from_axis_angle(axis: np.ndarray, angle) -> np.ndarray:
    """Unit quaternion for a rotation of `angle` radians about `axis`.

    `axis` must already be unit length; `angle` may be an array, in which
    case the result gains matching leading axes.
    """
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    w = np.cos(half)[..., None]
    xyz = np.sin(half)[..., None] * axis
    return np.concatenate([w, xyz], axis=-1)


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    """Quaternion from an axis-angle (rotation vector) encoding."""
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv, axis=-1)
    safe = np.where(angle < 1e-12, 1.0, angle)
    axis = np.where((angle < 1e-12)[..., None], np.array([1.0, 0.0, 0.0]), rv / safe[..., None])
    return quat_from_axis_angle(axis, angle)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix for quaternion q (broadcasting to (..., 3, 3))."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix (0..pi).

    atan2 form: accurate for tiny angles, where arccos of the trace
    loses half the significand.
    """
    axis = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    s = np.linalg.norm(axis)
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.arctan2(s, c))


def _frozen_array(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(shape)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Pose:
    """Rigid transform: unit quaternion rotation plus translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = _frozen_array(self.rotation, (4,))
        trans = _frozen_array(self.translation, (3,))
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(trans)):
            raise ValueError("pose contains non-finite values")
        if abs(np.linalg.norm(rot) - 1.0) > UNIT_QUAT_TOL:
            raise ValueError(f"quaternion norm {np.linalg.norm(rot)!r} is not within {UNIT_QUAT_TOL} of 1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(quat_identity(), np.zeros(3))

    @classmethod
    def from_xyz(cls, x: float, y: float, z: float) -> "Pose":
        return cls(quat_identity(), np.array([x, y, z], dtype=float))

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        axis = np.asarray(axis, dtype=float)
        norm = np.linalg.norm(axis)
        if norm == 0.0:
            raise ValueError("rotation axis must be nonzero")
        return cls(quat_from_axis_angle(axis / norm, float(angle)), np.asarray(translation, dtype=float))

    def compose(self, other: "Pose") -> "Pose":
        rot = quat_normalize(quat_mul(self.rotation, other.rotation))
        trans = self.translation + quat_rotate(self.rotation, other.translation)
        return Pose(rot, trans)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points (..., 3) into the parent frame."""
        return quat_rotate(self.rotation, np.asarray(points, dtype=float)) + self.translation

    def inverse(self) -> "Pose":
        inv_rot = quat_conjugate(self.rotation)
        return Pose(inv_rot, -quat_rotate(inv_rot, self.translation))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m
