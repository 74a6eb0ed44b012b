"""Depth-sensor simulation: a 40-sensor wearable multizone-ToF
constellation on the arms (egocentric rig) and a 4-camera depth rig at
head height (exocentric rig).

Zone depths are ranges along per-zone rays from a pinhole frustum, so a
noiseless frame is exactly reproducible from `geometry.raycast`. The
robot's own collision spheres are rendered as scene geometry; returns
that hit the robot body are flagged and later excluded from
deprojection so the planners never see self-points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels, geometry, kinematics
from .seeds import seed_sequence
from .transforms import Pose, quat_mul, quat_normalize, quat_rotate

RIGS = ("egocentric", "exocentric")


class SensingError(ValueError):
    pass


@dataclass(frozen=True)
class TofSensorSpec:
    """Multizone ToF sensor: square frustum, one ray per zone center.

    `supersample` switches to a 2x2 subzone minimum per zone (closer to
    how real zones integrate returns); the default single-center-ray
    mode is what the oracle tests pin down.
    """

    zones_x: int = 8
    zones_y: int = 8
    diagonal_fov: float = math.radians(63.0)
    max_range: float = 4.0
    rate_hz: float = 15.0
    supersample: bool = False

    def __post_init__(self):
        if self.zones_x < 1 or self.zones_y < 1:
            raise SensingError("zone counts must be >= 1")
        if not 0.0 < self.diagonal_fov < math.pi:
            raise SensingError("diagonal_fov must be in (0, pi)")
        if self.max_range <= 0.0:
            raise SensingError("max_range must be positive")

    @property
    def side_fov(self) -> float:
        # Square frustum: tan(d/2) = sqrt(2) * tan(s/2).
        return 2.0 * math.atan(math.tan(self.diagonal_fov / 2.0) / math.sqrt(2.0))

    @property
    def shape(self):
        return (self.zones_y, self.zones_x)

    @property
    def half_tangents(self):
        t = math.tan(self.side_fov / 2.0)
        return t, t


@dataclass(frozen=True)
class CameraSpec:
    """Rectangular-frustum depth camera (D435-like preset, desk-scale
    resolution by default)."""

    width: int = 160
    height: int = 90
    fov_h: float = math.radians(87.0)
    fov_v: float = math.radians(58.0)
    max_range: float = 6.0
    supersample: bool = False

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise SensingError("resolution must be >= 1")
        for fov in (self.fov_h, self.fov_v):
            if not 0.0 < fov < math.pi:
                raise SensingError("fields of view must be in (0, pi)")
        if self.max_range <= 0.0:
            raise SensingError("max_range must be positive")

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def half_tangents(self):
        return math.tan(self.fov_h / 2.0), math.tan(self.fov_v / 2.0)


@lru_cache(maxsize=32)
def _cached_dirs(nx: int, ny: int, tx: float, ty: float) -> np.ndarray:
    xs = (2.0 * (np.arange(nx) + 0.5) / nx - 1.0) * tx
    ys = (2.0 * (np.arange(ny) + 0.5) / ny - 1.0) * ty
    gx, gy = np.meshgrid(xs, ys)
    d = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    d.flags.writeable = False
    return d


def zone_ray_directions(spec) -> np.ndarray:
    """Unit ray directions through the zone (or pixel) centers, sensor
    frame, optical axis +z; shape (zones_y, zones_x, 3)."""
    tx, ty = spec.half_tangents
    ny, nx = spec.shape
    return _cached_dirs(nx, ny, tx, ty)


def subzone_ray_directions(spec) -> np.ndarray:
    """2x2 subzone-center rays for the supersampled render mode; shape
    (zones_y, zones_x, 4, 3)."""
    tx, ty = spec.half_tangents
    ny, nx = spec.shape
    fine = _cached_dirs(2 * nx, 2 * ny, tx, ty)
    return fine.reshape(ny, 2, nx, 2, 3).transpose(0, 2, 1, 3, 4).reshape(ny, nx, 4, 3)


@dataclass(frozen=True)
class DepthFrame:
    """One sensor capture: per-zone range in meters; misses carry the
    sentinel value `spec.max_range`."""

    spec: object
    zones: np.ndarray
    t_index: int = 0
    self_hit: np.ndarray = None

    def __post_init__(self):
        zones = np.asarray(self.zones, dtype=float)
        if zones.shape != self.spec.shape:
            raise SensingError(f"zone grid shape {zones.shape} does not match spec {self.spec.shape}")
        if np.any(zones <= 0.0) or np.any(zones > self.spec.max_range):
            raise SensingError("depths must lie in (0, max_range]")
        zones = zones.copy()
        zones.flags.writeable = False
        object.__setattr__(self, "zones", zones)
        if self.self_hit is not None:
            mask = np.asarray(self.self_hit, dtype=bool)
            if mask.shape != self.spec.shape:
                raise SensingError("self_hit mask shape mismatch")
            mask = mask.copy()
            mask.flags.writeable = False
            object.__setattr__(self, "self_hit", mask)

    @property
    def sentinel(self) -> float:
        return self.spec.max_range


@dataclass(frozen=True)
class NoiseParams:
    sigma_rel: float = 0.0
    dropout_p: float = 0.0

    def __post_init__(self):
        if self.sigma_rel < 0.0:
            raise SensingError("sigma_rel must be >= 0")
        if not 0.0 <= self.dropout_p <= 1.0:
            raise SensingError("dropout_p must be in [0, 1]")


@dataclass(frozen=True)
class SensorMount:
    """Where a sensor sits: on an arm link, on the head, or fixed around
    the robot (pose then relative to the torso frame). Optical axis +z."""

    mount_id: int
    frame: str  # "left" | "right" | "head" | "fixed"
    link: int
    pose: Pose

    def __post_init__(self):
        if self.frame not in ("left", "right", "head", "fixed"):
            raise SensingError(f"unknown mount frame {self.frame!r}")


@dataclass(frozen=True)
class RigLayout:
    tof: TofSensorSpec
    camera: CameraSpec
    ego_mounts: tuple
    exo_mounts: tuple


@dataclass(frozen=True)
class FrameCapture:
    mount_id: int
    pose: Pose
    frame: DepthFrame


@dataclass(frozen=True)
class RigObservation:
    rig: str
    captures: tuple

    def __post_init__(self):
        if self.rig not in RIGS:
            raise SensingError(f"rig must be one of {RIGS}")
        object.__setattr__(self, "captures", tuple(self.captures))


# --- default layout -------------------------------------------------------

RING_OFFSET = 0.08
# (link index, longitudinal offset): two stations per upper arm and
# forearm, one on the hand; each carries a ring of four outward sensors.
EGO_STATIONS = ((2, -0.09), (2, -0.18), (3, -0.09), (3, -0.18), (6, -0.05))
_RING = (
    ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), math.pi / 2),    # +x: Ry(+90)
    ((0.0, 1.0, 0.0), (1.0, 0.0, 0.0), -math.pi / 2),   # +y: Rx(-90)
    ((-1.0, 0.0, 0.0), (0.0, 1.0, 0.0), -math.pi / 2),  # -x: Ry(-90)
    ((0.0, -1.0, 0.0), (1.0, 0.0, 0.0), math.pi / 2),   # -y: Rx(+90)
)

EXO_TILT = 3.0 * math.pi / 4.0  # +z optical axis pitched 45 deg below horizontal
EXO_HEIGHT = 0.25
EXO_DISTANCE = 1.0


@lru_cache(maxsize=1)
def default_rig_layout() -> RigLayout:
    """Ship-with-the-package layout: 20 ToF sensors per arm in outward
    rings, plus a head camera and three cameras at head height (front,
    left, right) tilted 45 degrees down."""
    ego = []
    mount_id = 0
    for side in ("left", "right"):
        for link, z in EGO_STATIONS:
            for radial, axis, angle in _RING:
                translation = np.array(radial) * RING_OFFSET + np.array([0.0, 0.0, z])
                pose = Pose.from_axis_angle(axis, angle, translation)
                ego.append(SensorMount(mount_id, side, link, pose))
                mount_id += 1

    exo = [SensorMount(40, "head", -1, Pose.from_axis_angle((0, 1, 0), EXO_TILT, (0.05, 0.0, 0.0)))]
    for mid, (pos, yaw) in enumerate(
        (
            ((EXO_DISTANCE, 0.0, EXO_HEIGHT), math.pi),
            ((0.0, EXO_DISTANCE, EXO_HEIGHT), -math.pi / 2),
            ((0.0, -EXO_DISTANCE, EXO_HEIGHT), math.pi / 2),
        ),
        start=41,
    ):
        pose = Pose.from_axis_angle((0, 0, 1), yaw, pos).compose(Pose.from_axis_angle((0, 1, 0), EXO_TILT))
        exo.append(SensorMount(mid, "fixed", -1, pose))
    return RigLayout(TofSensorSpec(), CameraSpec(), tuple(ego), tuple(exo))


def mount_world_pose(mount: SensorMount, model, fk: kinematics.FKFrames) -> Pose:
    if mount.frame in ("left", "right"):
        arm = fk.left if mount.frame == "left" else fk.right
        link_pose = Pose(arm.quats[0, mount.link], arm.trans[0, mount.link])
        return link_pose.compose(mount.pose)
    if mount.frame == "head":
        return model.torso_frame.compose(model.head_frame).compose(mount.pose)
    return model.torso_frame.compose(mount.pose)


# --- rendering ------------------------------------------------------------

def render_depth(world: geometry.World, pose: Pose, spec, t_index: int = 0) -> DepthFrame:
    """Noiseless render: one raycast per zone center (or the minimum over
    a 2x2 subzone grid when the spec enables supersampling); sentinel on
    miss."""
    if spec.supersample:
        dirs = subzone_ray_directions(spec).reshape(-1, 3)
    else:
        dirs = zone_ray_directions(spec).reshape(-1, 3)
    world_dirs = quat_rotate(pose.rotation, dirs)
    origins = np.broadcast_to(pose.translation, world_dirs.shape)
    t = geometry.raycast_batch(world, origins, world_dirs, spec.max_range)
    if spec.supersample:
        t = t.reshape(-1, 4).min(axis=1)
    zones = np.where(np.isfinite(t), t, spec.max_range).reshape(spec.shape)
    return DepthFrame(spec, zones, t_index)


def render_tof(world: geometry.World, mount_world: Pose, spec: TofSensorSpec, t_index: int = 0) -> DepthFrame:
    return render_depth(world, mount_world, spec, t_index)


def render_camera(world: geometry.World, pose: Pose, spec: CameraSpec, t_index: int = 0) -> DepthFrame:
    return render_depth(world, pose, spec, t_index)


def apply_noise(frame: DepthFrame, noise: NoiseParams, rng_seed: int) -> DepthFrame:
    """Multiplicative range noise plus independent zone dropout.

    Non-sentinel depths are scaled by (1 + N(0, sigma_rel)) and clamped
    into (0, max_range]; every zone is independently replaced by the
    sentinel with probability dropout_p. Deterministic per seed.
    """
    gen = np.random.default_rng(int(rng_seed))
    sentinel = frame.sentinel
    zones = np.array(frame.zones)
    live = zones < sentinel
    gauss = gen.standard_normal(zones.shape)
    noisy = np.clip(zones * (1.0 + noise.sigma_rel * gauss), 1e-6, sentinel)
    zones = np.where(live, noisy, zones)
    drop = gen.random(zones.shape) < noise.dropout_p
    zones = np.where(drop, sentinel, zones)
    return DepthFrame(frame.spec, zones, frame.t_index, frame.self_hit)


def render_rig(
    world: geometry.World,
    model,
    q,
    rig: str,
    layout: RigLayout = None,
    noise: NoiseParams = NoiseParams(),
    rng_seed: int = 0,
    t_index: int = 0,
) -> RigObservation:
    """Render every sensor of the named rig at configuration q.

    Self-occlusion is included: the robot's collision spheres are cast
    against alongside the world, and returns hitting the body are
    flagged per zone.
    """
    if rig not in RIGS:
        raise SensingError(f"rig must be one of {RIGS}")
    layout = layout or default_rig_layout()
    q = kinematics.as_joint_vector(q)
    fk = kinematics.fk_batch(model, q[None, :])

    mounts = layout.ego_mounts if rig == "egocentric" else layout.exo_mounts
    spec = layout.tof if rig == "egocentric" else layout.camera
    mounts = sorted(mounts, key=lambda m: m.mount_id)
    n_mounts = len(mounts)

    quats = np.empty((n_mounts, 4))
    trans = np.empty((n_mounts, 3))
    head = model.torso_frame.compose(model.head_frame)
    for i, mount in enumerate(mounts):
        if mount.frame in ("left", "right"):
            arm = fk.left if mount.frame == "left" else fk.right
            base_q, base_t = arm.quats[0, mount.link], arm.trans[0, mount.link]
        elif mount.frame == "head":
            base_q, base_t = head.rotation, head.translation
        else:
            base_q, base_t = model.torso_frame.rotation, model.torso_frame.translation
        quats[i] = quat_mul(base_q, mount.pose.rotation)
        trans[i] = base_t + quat_rotate(base_q, mount.pose.translation)

    if spec.supersample:
        dirs_local = subzone_ray_directions(spec).reshape(-1, 3)
    else:
        dirs_local = zone_ray_directions(spec).reshape(-1, 3)
    n_rays = dirs_local.shape[0]
    all_dirs = quat_rotate(quats[:, None, :], dirs_local[None, :, :]).reshape(-1, 3)
    all_origins = np.repeat(trans, n_rays, axis=0)

    t_world = geometry.raycast_batch(world, all_origins, all_dirs, spec.max_range)
    centers = kinematics.collision_spheres_traj(model, q[None, :], fk)[0]
    radii = kinematics.sphere_radii(model)
    t_self = np.empty(all_dirs.shape[0])
    _kernels.ray_spheres(
        np.ascontiguousarray(centers), radii, np.ascontiguousarray(all_origins),
        np.ascontiguousarray(all_dirs), t_self,
    )

    t_hit = np.minimum(t_world, t_self)
    is_self = t_self < t_world
    if spec.supersample:
        groups = t_hit.reshape(-1, 4)
        pick = np.argmin(groups, axis=1)
        rows = np.arange(groups.shape[0])
        t_hit = groups[rows, pick]
        is_self = is_self.reshape(-1, 4)[rows, pick]
    depth = np.where(t_hit <= spec.max_range, t_hit, spec.max_range)
    self_mask = (is_self & (t_hit <= spec.max_range)).reshape(n_mounts, *spec.shape)

    # one derived stream drives all frames' noise, drawn in mount order
    gen = np.random.default_rng(seed_sequence(rng_seed, "noise"))
    zones = depth.reshape(n_mounts, *spec.shape)
    live = zones < spec.max_range
    gauss = gen.standard_normal(zones.shape)
    noisy = np.clip(zones * (1.0 + noise.sigma_rel * gauss), 1e-6, spec.max_range)
    zones = np.where(live, noisy, zones)
    drop = gen.random(zones.shape) < noise.dropout_p
    zones = np.where(drop, spec.max_range, zones)

    captures = []
    for i, mount in enumerate(mounts):
        pose = Pose(quat_normalize(quats[i]), trans[i])
        frame = DepthFrame(spec, zones[i], t_index, self_mask[i])
        captures.append(FrameCapture(mount.mount_id, pose, frame))
    return RigObservation(rig, tuple(captures))


def deproject(obs: RigObservation) -> geometry.PointCloud:
    """World-frame point cloud from all non-sentinel, non-self returns."""
    chunks = []
    for capture in obs.captures:
        frame = capture.frame
        dirs = zone_ray_directions(frame.spec).reshape(-1, 3)
        zones = frame.zones.reshape(-1)
        valid = zones < frame.sentinel
        if frame.self_hit is not None:
            valid &= ~frame.self_hit.reshape(-1)
        if not np.any(valid):
            continue
        local = zones[valid, None] * dirs[valid]
        chunks.append(capture.pose.apply(local))
    points = np.concatenate(chunks) if chunks else np.zeros((0, 3))
    return geometry.PointCloud(points, obs.rig)
