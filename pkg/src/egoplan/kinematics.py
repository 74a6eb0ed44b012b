"""Serial-chain forward kinematics for a dual-arm humanoid.

Conventions:
- A configuration ``q`` is a flat array of 14 joint angles in radians,
  ordered ``[left arm 7, right arm 7]``; per-arm order is shoulder_pitch,
  shoulder_roll, shoulder_yaw, elbow_pitch, wrist_yaw, wrist_pitch,
  wrist_roll.
- Link frame ``i`` is the frame *after* joint ``i`` has been applied:
  ``frame_i = frame_{i-1} * offset_i * Rot(axis_i, q_i)``. The hand
  (end-effector) frame hangs off link 6 by a fixed offset.
- All poses returned by this module are world-frame.

Batched entry points accept a ``(T, 14)`` trajectory and evaluate every
waypoint in one vectorized pass; the single-configuration API is a thin
wrapper over the same code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transforms import Pose, quat_from_axis_angle, quat_mul, quat_rotate

NUM_JOINTS = 14
JOINTS_PER_ARM = 7
JOINT_NAMES = (
    "shoulder_pitch",
    "shoulder_roll",
    "shoulder_yaw",
    "elbow_pitch",
    "wrist_yaw",
    "wrist_pitch",
    "wrist_roll",
)
SIDES = ("left", "right")


class ModelError(ValueError):
    """Raised when a robot model violates its structural invariants."""


@dataclass(frozen=True)
class ArmLink:
    """One revolute joint: rotation axis in the local frame, fixed parent
    offset, and closed-interval position limits."""

    axis: np.ndarray
    offset: Pose
    lower: float
    upper: float

    def __post_init__(self):
        axis = np.array(self.axis, dtype=float).reshape(3)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ModelError("joint axis must be unit length")
        axis.flags.writeable = False
        object.__setattr__(self, "axis", axis)
        if not self.lower < self.upper:
            raise ModelError(f"joint limits must satisfy lower < upper, got [{self.lower}, {self.upper}]")


@dataclass(frozen=True)
class SphereSpec:
    """Collision sphere attached to a link (by index) at a local center."""

    link: int
    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.array(self.center, dtype=float).reshape(3)
        center.flags.writeable = False
        object.__setattr__(self, "center", center)
        if self.radius <= 0.0:
            raise ModelError("sphere radius must be positive")


@dataclass(frozen=True)
class MountSpec:
    """Sensor attachment record: link index plus local pose (optical axis +z)."""

    link: int
    pose: Pose


@dataclass(frozen=True)
class ArmModel:
    links: tuple
    base_pose: Pose
    ee_offset: Pose
    spheres: tuple
    mounts: tuple = ()

    def __post_init__(self):
        if len(self.links) != JOINTS_PER_ARM:
            raise ModelError(f"arm must have exactly {JOINTS_PER_ARM} links, got {len(self.links)}")
        for sphere in self.spheres:
            if not 0 <= sphere.link < JOINTS_PER_ARM:
                raise ModelError(f"sphere link index {sphere.link} out of range")
        for mount in self.mounts:
            if not 0 <= mount.link < JOINTS_PER_ARM:
                raise ModelError(f"mount link index {mount.link} out of range")


@dataclass(frozen=True)
class RobotModel:
    left: ArmModel
    right: ArmModel
    torso_frame: Pose
    head_frame: Pose
    torso_spheres: tuple = ()
    nominal: bool = True

    def __post_init__(self):
        _check_mirror_consistency(self.left, self.right)

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([l.lower for l in self.left.links] + [l.lower for l in self.right.links])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([l.upper for l in self.left.links] + [l.upper for l in self.right.links])

    def num_spheres(self) -> int:
        return len(self.left.spheres) + len(self.right.spheres) + len(self.torso_spheres)


def _check_mirror_consistency(left: ArmModel, right: ArmModel):
    """Left/right must have the same link count and axes equal up to sign
    after mirroring across the torso xz-plane."""
    if len(left.links) != len(right.links):
        raise ModelError("left and right arms must have the same link count")
    mirror = np.array([1.0, -1.0, 1.0])
    for i, (ll, rl) in enumerate(zip(left.links, right.links)):
        mirrored = mirror * ll.axis
        if not (np.allclose(mirrored, rl.axis, atol=1e-9) or np.allclose(mirrored, -rl.axis, atol=1e-9)):
            raise ModelError(f"joint {i} axes are not mirror-consistent")
        if not np.allclose(np.abs(mirror * ll.offset.translation), np.abs(rl.offset.translation), atol=1e-9):
            raise ModelError(f"joint {i} offsets are not mirror-consistent")


def as_joint_vector(q, name: str = "q") -> np.ndarray:
    """Coerce to a (14,) float array, rejecting bad shape or non-finite entries."""
    arr = np.asarray(q, dtype=float)
    if arr.shape != (NUM_JOINTS,):
        raise ValueError(f"{name} must have shape ({NUM_JOINTS},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ValueError(f"{name}[{bad}] is not finite")
    return arr


def as_trajectory(traj, name: str = "trajectory") -> np.ndarray:
    arr = np.asarray(traj, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != NUM_JOINTS:
        raise ValueError(f"{name} must have shape (T, {NUM_JOINTS}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class ArmFrames:
    """Raw world-frame FK arrays for one arm over T waypoints.

    ``quats``/``trans`` index frames 0..6 (after each joint) plus the hand
    frame at index 7. ``joint_axes``/``joint_origins`` are the world-frame
    revolute axes and origins needed for geometric Jacobians.
    """

    quats: np.ndarray
    trans: np.ndarray
    joint_axes: np.ndarray
    joint_origins: np.ndarray


@dataclass(frozen=True)
class FKFrames:
    left: ArmFrames
    right: ArmFrames


@dataclass(frozen=True)
class FKResult:
    """World poses of all 14 link frames plus the two hand frames."""

    left: tuple
    right: tuple
    left_ee: Pose
    right_ee: Pose

    def frames(self) -> list:
        return list(self.left) + list(self.right) + [self.left_ee, self.right_ee]


_IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def _arm_frames(arm: ArmModel, base: Pose, Q: np.ndarray) -> ArmFrames:
    """Chain the 7 joints of one arm for Q of shape (T, 7).

    Identity offset rotations and zero offset translations (the common
    case) skip their compose step; unit quaternion products drift by at
    most a few ulp over the chain, far below the FK tolerance, so no
    per-step renormalization is needed.
    """
    T = Q.shape[0]
    quats = np.empty((T, 8, 4))
    trans = np.empty((T, 8, 3))
    joint_axes = np.empty((T, 7, 3))
    joint_origins = np.empty((T, 7, 3))

    cur_q = np.broadcast_to(base.rotation, (T, 4))
    cur_t = np.broadcast_to(base.translation, (T, 3))
    for j, link in enumerate(arm.links):
        off = link.offset
        if np.array_equal(off.rotation, _IDENTITY_QUAT):
            pre_q = cur_q
        else:
            pre_q = quat_mul(cur_q, off.rotation)
        if off.translation.any():
            pre_t = cur_t + quat_rotate(cur_q, off.translation)
        else:
            pre_t = cur_t
        joint_axes[:, j] = quat_rotate(pre_q, link.axis)
        joint_origins[:, j] = pre_t
        rot = quat_from_axis_angle(link.axis, Q[:, j])
        cur_q = quat_mul(pre_q, rot)
        cur_t = pre_t
        quats[:, j] = cur_q
        trans[:, j] = cur_t

    if np.array_equal(arm.ee_offset.rotation, _IDENTITY_QUAT):
        quats[:, 7] = cur_q
    else:
        quats[:, 7] = quat_mul(cur_q, arm.ee_offset.rotation)
    trans[:, 7] = cur_t + quat_rotate(cur_q, arm.ee_offset.translation)
    return ArmFrames(quats, trans, joint_axes, joint_origins)


def fk_batch(model: RobotModel, Q) -> FKFrames:
    """Forward kinematics for a (T, 14) trajectory, returning raw arrays."""
    Q = as_trajectory(Q, "Q")
    left_base = model.torso_frame.compose(model.left.base_pose)
    right_base = model.torso_frame.compose(model.right.base_pose)
    return FKFrames(
        left=_arm_frames(model.left, left_base, Q[:, :JOINTS_PER_ARM]),
        right=_arm_frames(model.right, right_base, Q[:, JOINTS_PER_ARM:]),
    )


def forward_kinematics(model: RobotModel, q) -> FKResult:
    """World pose of every link frame and both end-effector frames.

    Pure function of (model, q); rejects non-finite angles.
    """
    q = as_joint_vector(q)
    frames = fk_batch(model, q[None, :])

    def _poses(arm_frames: ArmFrames):
        return tuple(Pose(arm_frames.quats[0, j], arm_frames.trans[0, j]) for j in range(7))

    return FKResult(
        left=_poses(frames.left),
        right=_poses(frames.right),
        left_ee=Pose(frames.left.quats[0, 7], frames.left.trans[0, 7]),
        right_ee=Pose(frames.right.quats[0, 7], frames.right.trans[0, 7]),
    )


def end_effector_position(model: RobotModel, q, side: str) -> np.ndarray:
    """World position of the named hand frame origin."""
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")
    q = as_joint_vector(q)
    frames = fk_batch(model, q[None, :])
    arm = frames.left if side == "left" else frames.right
    return arm.trans[0, 7].copy()


def ee_positions_batch(model: RobotModel, Q) -> np.ndarray:
    """End-effector positions for a (T, 14) trajectory, shape (T, 2, 3)."""
    frames = fk_batch(model, Q)
    return np.stack([frames.left.trans[:, 7], frames.right.trans[:, 7]], axis=1)


def sphere_radii(model: RobotModel) -> np.ndarray:
    radii = [s.radius for s in model.left.spheres]
    radii += [s.radius for s in model.right.spheres]
    radii += [r for _, r in model.torso_spheres]
    return np.array(radii)


def collision_spheres_traj(model: RobotModel, Q, frames: FKFrames = None) -> np.ndarray:
    """World sphere centers for each waypoint; shape (T, S, 3).

    Sphere order is left-arm spheres, right-arm spheres, torso spheres;
    radii (which do not depend on q) come from :func:`sphere_radii`.
    Pass precomputed `frames` to avoid a second FK sweep.
    """
    Q = as_trajectory(Q, "Q")
    frames = frames if frames is not None else fk_batch(model, Q)
    T = Q.shape[0]
    chunks = []
    for arm, arm_frames in ((model.left, frames.left), (model.right, frames.right)):
        if not arm.spheres:
            continue
        links = np.array([s.link for s in arm.spheres])
        centers = np.array([s.center for s in arm.spheres])
        q = arm_frames.quats[:, links]
        t = arm_frames.trans[:, links]
        chunks.append(quat_rotate(q, centers) + t)
    if model.torso_spheres:
        centers = np.array([c for c, _ in model.torso_spheres])
        world = model.torso_frame.apply(centers)
        chunks.append(np.broadcast_to(world, (T,) + world.shape))
    return np.concatenate(chunks, axis=1)


def collision_spheres_at(model: RobotModel, q):
    """(centers (S, 3), radii (S,)) of the body proxy at configuration q."""
    q = as_joint_vector(q)
    centers = collision_spheres_traj(model, q[None, :])[0]
    return centers, sphere_radii(model)


def _cross_last(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def sphere_jacobians_traj(model: RobotModel, Q, frames: FKFrames = None) -> np.ndarray:
    """Geometric Jacobians of every sphere center at every waypoint;
    shape (T, S, 3, 14). Torso spheres do not move with the arms, so
    their blocks are zero."""
    Q = as_trajectory(Q, "Q")
    frames = frames if frames is not None else fk_batch(model, Q)
    centers = collision_spheres_traj(model, Q, frames)
    T, S = centers.shape[0], centers.shape[1]
    jac = np.zeros((T, S, 3, NUM_JOINTS))
    offset = 0
    for side_idx, (arm, arm_frames) in enumerate(((model.left, frames.left), (model.right, frames.right))):
        n = len(arm.spheres)
        if n == 0:
            continue
        links = np.array([s.link for s in arm.spheres])
        axes = arm_frames.joint_axes  # (T, 7, 3)
        origins = arm_frames.joint_origins
        c = centers[:, offset:offset + n]  # (T, n, 3)
        lever = c[:, :, None, :] - origins[:, None, :, :]  # (T, n, 7, 3)
        cols = _cross_last(axes[:, None, :, :], lever)
        # joint j moves the sphere iff j <= sphere link index
        mask = np.arange(7)[None, :] <= links[:, None]
        cols = np.where(mask[None, :, :, None], cols, 0.0)
        jcols = slice(side_idx * JOINTS_PER_ARM, (side_idx + 1) * JOINTS_PER_ARM)
        jac[:, offset:offset + n, :, jcols] = np.transpose(cols, (0, 1, 3, 2))
        offset += n
    return jac


def sphere_jacobians(model: RobotModel, q) -> np.ndarray:
    """Geometric Jacobian of each sphere center w.r.t. q; shape (S, 3, 14)."""
    q = as_joint_vector(q)
    return sphere_jacobians_traj(model, q[None, :])[0]


def ee_jacobian_from_frames(frames: FKFrames, t: int, side: str) -> np.ndarray:
    """Position Jacobian of the hand frame at waypoint t, shape (3, 14)."""
    arm_frames = frames.left if side == "left" else frames.right
    ee = arm_frames.trans[t, 7]
    cols = _cross_last(arm_frames.joint_axes[t], ee[None, :] - arm_frames.joint_origins[t])
    jac = np.zeros((3, NUM_JOINTS))
    start = 0 if side == "left" else JOINTS_PER_ARM
    jac[:, start:start + JOINTS_PER_ARM] = cols.T
    return jac


def ee_jacobian(model: RobotModel, q, side: str) -> np.ndarray:
    """Position Jacobian of the named hand frame, shape (3, 14)."""
    q = as_joint_vector(q)
    return ee_jacobian_from_frames(fk_batch(model, q[None, :]), 0, side)


@dataclass(frozen=True)
class LimitViolation:
    index: int
    name: str
    value: float
    lower: float
    upper: float


def check_limits(model: RobotModel, q) -> list:
    """Per-joint limit report; empty iff every joint is inside its
    closed interval [lower, upper]."""
    q = as_joint_vector(q)
    lo = model.lower_limits
    hi = model.upper_limits
    out = []
    for i in range(NUM_JOINTS):
        if q[i] < lo[i] or q[i] > hi[i]:
            side = SIDES[i // JOINTS_PER_ARM]
            name = f"{side}.{JOINT_NAMES[i % JOINTS_PER_ARM]}"
            out.append(LimitViolation(i, name, float(q[i]), float(lo[i]), float(hi[i])))
    return out


def clamp_to_limits(model: RobotModel, q) -> np.ndarray:
    arr = np.asarray(q, dtype=float)
    return np.clip(arr, model.lower_limits, model.upper_limits)


def linear_interpolate(q0, q1, steps: int) -> np.ndarray:
    """Joint-space straight line with `steps` waypoints, endpoints exact."""
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    q0 = as_joint_vector(q0, "q0")
    q1 = as_joint_vector(q1, "q1")
    idx = np.arange(steps, dtype=float)
    s = idx / (steps - 1)
    w = idx[::-1] / (steps - 1)
    return w[:, None] * q0 + s[:, None] * q1


def max_reach(model: RobotModel) -> float:
    """Upper bound on hand distance from the mid-shoulder point."""
    best = 0.0
    mid = 0.5 * (model.left.base_pose.translation + model.right.base_pose.translation)
    for arm in (model.left, model.right):
        reach = float(np.linalg.norm(arm.base_pose.translation - mid))
        for link in arm.links:
            reach += float(np.linalg.norm(link.offset.translation))
        reach += float(np.linalg.norm(arm.ee_offset.translation))
        best = max(best, reach)
    return best


def shoulder_midpoint(model: RobotModel) -> np.ndarray:
    """World-frame point centered between the two arm roots."""
    mid = 0.5 * (model.left.base_pose.translation + model.right.base_pose.translation)
    return model.torso_frame.apply(mid)
