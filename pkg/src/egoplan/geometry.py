"""Ground-truth obstacle world: signed distances, ray casting, and
point-cloud utilities.

Shapes are analytic (sphere, box, capsule) so signed distances and ray
hits are exact, which keeps oracle tests strict. All queries come in a
scalar and a batched flavor; the scalar API is a thin wrapper over the
batched kernels, so both paths produce bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kinematics
from .transforms import quat_conjugate, quat_rotate, quat_to_matrix

PROVENANCE_TAGS = ("egocentric", "exocentric", "synthetic")


class GeometryError(ValueError):
    pass


def _vec3(v, name: str) -> np.ndarray:
    arr = np.array(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{name} must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        if self.radius <= 0.0:
            raise GeometryError("sphere radius must be positive")

    def aabb(self):
        r = self.radius
        return self.center - r, self.center + r


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray  # unit quaternion [w, x, y, z]

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        he = _vec3(self.half_extents, "half_extents")
        if np.any(he <= 0.0):
            raise GeometryError("box half-extents must be positive")
        object.__setattr__(self, "half_extents", he)
        rot = np.array(self.rotation, dtype=float).reshape(4)
        if abs(np.linalg.norm(rot) - 1.0) > 1e-9:
            raise GeometryError("box orientation quaternion must be unit length")
        rot.flags.writeable = False
        object.__setattr__(self, "rotation", rot)

    def aabb(self):
        extent = np.abs(quat_to_matrix(self.rotation)) @ self.half_extents
        return self.center - extent, self.center + extent


@dataclass(frozen=True)
class Capsule:
    a: np.ndarray
    b: np.ndarray
    radius: float

    def __post_init__(self):
        a = _vec3(self.a, "a")
        b = _vec3(self.b, "b")
        if np.allclose(a, b):
            raise GeometryError("capsule endpoints must be distinct")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if self.radius <= 0.0:
            raise GeometryError("capsule radius must be positive")

    def aabb(self):
        r = self.radius
        return np.minimum(self.a, self.b) - r, np.maximum(self.a, self.b) + r


Obstacle = (Sphere, Box, Capsule)


@dataclass(frozen=True)
class World:
    """Immutable obstacle set plus an axis-aligned bounding box."""

    obstacles: tuple
    bounds: tuple  # (min (3,), max (3,))

    def __post_init__(self):
        obstacles = tuple(self.obstacles)
        object.__setattr__(self, "obstacles", obstacles)
        lo, hi = self.bounds
        lo = _vec3(lo, "bounds min")
        hi = _vec3(hi, "bounds max")
        if np.any(lo > hi):
            raise GeometryError("world bounds min must not exceed max")
        for i, obs in enumerate(obstacles):
            omin, omax = obs.aabb()
            if np.any(omin < lo - 1e-9) or np.any(omax > hi + 1e-9):
                raise GeometryError(f"obstacle {i} lies outside the world bounds")
        object.__setattr__(self, "bounds", (lo, hi))


def make_world(obstacles, pad: float = 0.05) -> World:
    """World with bounds fitted around the obstacles (plus `pad` meters)."""
    obstacles = tuple(obstacles)
    if not obstacles:
        z = np.zeros(3)
        return World(obstacles, (z - pad, z + pad))
    mins, maxs = zip(*(o.aabb() for o in obstacles))
    lo = np.min(np.array(mins), axis=0) - pad
    hi = np.max(np.array(maxs), axis=0) + pad
    return World(obstacles, (lo, hi))


@dataclass(frozen=True)
class PointCloud:
    """World-frame point set as consumed by the planners."""

    points: np.ndarray
    provenance: str

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point cloud contains non-finite coordinates")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.provenance not in PROVENANCE_TAGS:
            raise GeometryError(f"provenance must be one of {PROVENANCE_TAGS}")

    def __len__(self) -> int:
        return self.points.shape[0]


# --- signed distance ------------------------------------------------------

def sdf_obstacle(obs, points: np.ndarray) -> np.ndarray:
    """Exact signed distance from each point (N, 3) to one obstacle."""
    p = np.asarray(points, dtype=float)
    if isinstance(obs, Sphere):
        d = p - obs.center
        dist = np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2 + d[..., 2] ** 2)
        return dist - obs.radius
    if isinstance(obs, Box):
        if obs.rotation[0] == 1.0 and not obs.rotation[1:].any():
            local = p - obs.center
        else:
            local = quat_rotate(quat_conjugate(obs.rotation), p - obs.center)
        q = np.abs(local) - obs.half_extents
        qc = np.maximum(q, 0.0)
        outside = np.sqrt(qc[..., 0] ** 2 + qc[..., 1] ** 2 + qc[..., 2] ** 2)
        inside = np.minimum(np.maximum(q[..., 0], np.maximum(q[..., 1], q[..., 2])), 0.0)
        return outside + inside
    if isinstance(obs, Capsule):
        ba = obs.b - obs.a
        pa = p - obs.a
        denom = float(ba[0] ** 2 + ba[1] ** 2 + ba[2] ** 2)
        h = np.clip((pa[..., 0] * ba[0] + pa[..., 1] * ba[1] + pa[..., 2] * ba[2]) / denom, 0.0, 1.0)
        d = pa - h[..., None] * ba
        return np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2 + d[..., 2] ** 2) - obs.radius
    raise GeometryError(f"unsupported obstacle type {type(obs).__name__}")


def sdf_batch(world: World, points: np.ndarray) -> np.ndarray:
    """Signed distance to the nearest obstacle for each point (N, 3).

    Positive outside all obstacles, negative inside any; +inf for an
    empty world.
    """
    p = np.asarray(points, dtype=float)
    best = np.full(p.shape[:-1], np.inf)
    for obs in world.obstacles:
        best = np.minimum(best, sdf_obstacle(obs, p))
    return best


def sdf_point(world: World, p) -> float:
    p = np.asarray(p, dtype=float).reshape(3)
    if not np.all(np.isfinite(p)):
        raise GeometryError("query point must be finite")
    return float(sdf_batch(world, p[None, :])[0])


def robot_sdf_batch(centers: np.ndarray, radii: np.ndarray, points: np.ndarray) -> np.ndarray:
    """min over spheres of (|p - center| - radius) for each point (N, 3)."""
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if centers.size == 0:
        raise GeometryError("sphere list must be non-empty")
    p = np.asarray(points, dtype=float)
    d = p[..., None, :] - centers
    dist = np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2 + d[..., 2] ** 2)
    return np.min(dist - radii, axis=-1)


def robot_sdf(centers: np.ndarray, radii: np.ndarray, p) -> float:
    """Signed distance of one point to the robot's sphere-decomposed body."""
    p = np.asarray(p, dtype=float).reshape(3)
    return float(robot_sdf_batch(centers, radii, p[None, :])[0])


# --- ray casting ----------------------------------------------------------

def _ray_sphere(center, radius, O, D):
    oc = O - center
    b = oc[:, 0] * D[:, 0] + oc[:, 1] * D[:, 1] + oc[:, 2] * D[:, 2]
    c = oc[:, 0] ** 2 + oc[:, 1] ** 2 + oc[:, 2] ** 2 - radius ** 2
    disc = b ** 2 - c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = -b - sq
    t_far = -b + sq
    t = np.where(t_near > 0.0, t_near, np.where(t_far > 0.0, t_far, np.inf))
    return np.where(hit, t, np.inf)


def _ray_box(obs: Box, O, D):
    if obs.rotation[0] == 1.0 and not obs.rotation[1:].any():
        o = O - obs.center
        d = D
    else:
        inv = quat_conjugate(obs.rotation)
        o = quat_rotate(inv, O - obs.center)
        d = quat_rotate(inv, D)
    h = obs.half_extents
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-h - o) / d
        t2 = (h - o) / d
    degenerate = d == 0.0
    inside = np.abs(o) <= h
    lo = np.where(degenerate, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(degenerate, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    t_enter = np.max(lo, axis=-1)
    t_exit = np.min(hi, axis=-1)
    hit = (t_enter <= t_exit) & (t_exit > 0.0)
    t = np.where(t_enter > 0.0, t_enter, t_exit)
    return np.where(hit, t, np.inf)


def _ray_capsule(obs: Capsule, O, D):
    ba = obs.b - obs.a
    length = float(np.sqrt(ba[0] ** 2 + ba[1] ** 2 + ba[2] ** 2))
    u = ba / length
    r = obs.radius

    oc = O - obs.a
    o_par = oc[:, 0] * u[0] + oc[:, 1] * u[1] + oc[:, 2] * u[2]
    d_par = D[:, 0] * u[0] + D[:, 1] * u[1] + D[:, 2] * u[2]
    o_perp = oc - o_par[:, None] * u
    d_perp = D - d_par[:, None] * u

    A = d_perp[:, 0] ** 2 + d_perp[:, 1] ** 2 + d_perp[:, 2] ** 2
    B = o_perp[:, 0] * d_perp[:, 0] + o_perp[:, 1] * d_perp[:, 1] + o_perp[:, 2] * d_perp[:, 2]
    C = o_perp[:, 0] ** 2 + o_perp[:, 1] ** 2 + o_perp[:, 2] ** 2 - r ** 2
    disc = B ** 2 - A * C
    ok = (disc >= 0.0) & (A > 1e-18)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        roots = [np.where(ok, (-B - sq) / A, np.inf), np.where(ok, (-B + sq) / A, np.inf)]

    best = np.full(O.shape[0], np.inf)
    for t in roots:
        s = o_par + t * d_par
        valid = (t > 0.0) & np.isfinite(t) & (s >= 0.0) & (s <= length)
        best = np.minimum(best, np.where(valid, t, np.inf))

    for end, side in ((obs.a, -1.0), (obs.b, 1.0)):
        t_sph = _ray_sphere(end, r, O, D)
        hitp = O + np.where(np.isfinite(t_sph), t_sph, 0.0)[:, None] * D
        proj = (hitp[:, 0] - end[0]) * u[0] + (hitp[:, 1] - end[1]) * u[1] + (hitp[:, 2] - end[2]) * u[2]
        valid = np.isfinite(t_sph) & (side * proj >= 0.0)
        best = np.minimum(best, np.where(valid, t_sph, np.inf))
    return best


def raycast_obstacle(obs, O, D):
    if isinstance(obs, Sphere):
        return _ray_sphere(obs.center, obs.radius, O, D)
    if isinstance(obs, Box):
        return _ray_box(obs, O, D)
    if isinstance(obs, Capsule):
        return _ray_capsule(obs, O, D)
    raise GeometryError(f"unsupported obstacle type {type(obs).__name__}")


def raycast_batch(world: World, origins: np.ndarray, directions: np.ndarray, max_range: float) -> np.ndarray:
    """Smallest positive hit distance per ray, +inf where nothing is hit
    within ``max_range``. Directions must be unit length."""
    O = np.asarray(origins, dtype=float).reshape(-1, 3)
    D = np.asarray(directions, dtype=float).reshape(-1, 3)
    best = np.full(O.shape[0], np.inf)
    for obs in world.obstacles:
        best = np.minimum(best, raycast_obstacle(obs, O, D))
    return np.where(best <= max_range, best, np.inf)


def raycast_spheres(centers: np.ndarray, radii: np.ndarray, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Hit distances against a bag of spheres (used for robot self-geometry)."""
    O = np.asarray(origins, dtype=float).reshape(-1, 3)
    D = np.asarray(directions, dtype=float).reshape(-1, 3)
    best = np.full(O.shape[0], np.inf)
    for center, radius in zip(np.asarray(centers, dtype=float), np.asarray(radii, dtype=float)):
        best = np.minimum(best, _ray_sphere(center, radius, O, D))
    return best


def raycast(world: World, origin, direction, max_range: float):
    """Single-ray query: hit distance, or None on miss.

    Rejects directions whose norm is not within 1e-9 of 1.
    """
    origin = np.asarray(origin, dtype=float).reshape(3)
    direction = np.asarray(direction, dtype=float).reshape(3)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise GeometryError("ray direction must be normalized")
    t = raycast_batch(world, origin[None, :], direction[None, :], max_range)[0]
    return None if np.isinf(t) else float(t)


# --- point-cloud pruning --------------------------------------------------

REACH_MARGIN = 0.1
VOXEL_START = 0.005


def voxel_keys(points: np.ndarray, voxel: float) -> np.ndarray:
    """Integer voxel index per point, grid anchored at the world origin."""
    return np.floor(np.asarray(points, dtype=float) / voxel).astype(np.int64)


def prune_pointcloud(cloud: PointCloud, model, q, max_points: int, rng_seed: int) -> PointCloud:
    """Drop unreachable and self-colliding points, then voxel-downsample
    to at most ``max_points``.

    Reachability keeps points within (max arm reach + 0.1 m) of the
    mid-shoulder point; self filtering removes points strictly inside the
    robot's collision spheres at ``q``. If the survivor count exceeds the
    budget, the voxel size doubles from 5 mm until the occupied-voxel
    count fits, and one seeded representative per voxel is kept.
    """
    if max_points < 1:
        raise GeometryError("max_points must be >= 1")
    pts = cloud.points
    if len(pts) == 0:
        return cloud

    center = kinematics.shoulder_midpoint(model)
    reach = kinematics.max_reach(model) + REACH_MARGIN
    d = pts - center
    dist = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2 + d[:, 2] ** 2)
    keep = dist <= reach

    centers, radii = kinematics.collision_spheres_at(model, q)
    keep &= robot_sdf_batch(centers, radii, pts) >= 0.0

    pts = pts[keep]
    if pts.shape[0] <= max_points:
        return PointCloud(pts, cloud.provenance)

    voxel = VOXEL_START
    while True:
        keys = voxel_keys(pts, voxel)
        _, first_index = np.unique(keys, axis=0, return_index=True)
        if first_index.size <= max_points:
            break
        voxel *= 2.0

    groups = {}
    for i, key in enumerate(map(tuple, keys)):
        groups.setdefault(key, []).append(i)
    gen = np.random.default_rng(int(rng_seed))
    chosen = []
    for key in sorted(groups):
        members = groups[key]
        chosen.append(members[int(gen.integers(len(members)))])
    return PointCloud(pts[np.array(chosen)], cloud.provenance)
