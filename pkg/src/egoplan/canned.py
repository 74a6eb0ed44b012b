"""Canned probe scenes with deterministic pass/fail conditions.

The cabinet-reach scene reproduces the qualitative occlusion situation:
the arm reaches into a five-sided cabinet, a small target box sits
0.2 m lateral to the forearm, and every exocentric camera's line of
sight to it is blocked by a cabinet panel, while the wrist-mounted ring
sensors see it from inside.

The gap scene puts a thin pole ahead of the robot: the sparse wearable
rig returns a handful of points on it while the dense cameras cover it
with orders of magnitude more, which is the density gap the planners
have to live with.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry

IDENTITY_QUAT = (1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ProbeScene:
    name: str
    world: geometry.World
    q: np.ndarray
    target_index: int  # index of the probe obstacle in world.obstacles


def cabinet_reach_scene() -> ProbeScene:
    """Left arm reaching into a cabinet; the probe box hides inside."""
    q = np.zeros(14)
    q[0] = -1.3  # left shoulder pitch: arm forward
    q[3] = -0.3  # slight elbow bend

    target = geometry.Box([0.37, 0.42, -0.06], [0.05, 0.05, 0.05], IDENTITY_QUAT)
    panels = [
        geometry.Box([0.45, 0.20, 0.13], [0.35, 0.37, 0.02], IDENTITY_QUAT),   # top, overhanging lip
        geometry.Box([0.50, 0.57, -0.15], [0.30, 0.02, 0.30], IDENTITY_QUAT),  # left wall
        geometry.Box([0.50, -0.17, -0.15], [0.30, 0.02, 0.30], IDENTITY_QUAT),  # right wall
        geometry.Box([0.82, 0.20, -0.15], [0.02, 0.39, 0.30], IDENTITY_QUAT),  # back wall
        geometry.Box([0.50, 0.20, -0.47], [0.30, 0.37, 0.02], IDENTITY_QUAT),  # floor
    ]
    world = geometry.make_world([target] + panels)
    return ProbeScene("cabinet_reach", world, q, target_index=0)


def gap_pole_scene() -> ProbeScene:
    """Thin pole ahead of the torso; sparse zones sample it thinly."""
    q = np.zeros(14)
    q[0] = -1.1
    q[7] = -1.1
    pole = geometry.Capsule([0.45, 0.0, -0.65], [0.45, 0.0, 0.15], 0.03)
    world = geometry.make_world([pole])
    return ProbeScene("gap_pole", world, q, target_index=0)


def surface_samples(obstacle, n_per_axis: int = 12) -> np.ndarray:
    """Deterministic samples on an obstacle surface (probe points)."""
    if isinstance(obstacle, geometry.Sphere):
        i = np.arange(n_per_axis * n_per_axis)
        phi = np.arccos(1 - 2 * (i + 0.5) / i.size)
        theta = np.pi * (1 + 5 ** 0.5) * i
        d = np.stack([np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)], axis=1)
        return obstacle.center + obstacle.radius * d
    if isinstance(obstacle, geometry.Box):
        u = np.linspace(-1.0, 1.0, n_per_axis)
        faces = []
        for axis in range(3):
            for sign in (-1.0, 1.0):
                a, b = np.meshgrid(u, u)
                pts = np.zeros((n_per_axis * n_per_axis, 3))
                others = [i for i in range(3) if i != axis]
                pts[:, others[0]] = a.reshape(-1)
                pts[:, others[1]] = b.reshape(-1)
                pts[:, axis] = sign
                faces.append(pts * obstacle.half_extents)
        local = np.concatenate(faces)
        from .transforms import quat_rotate

        return quat_rotate(obstacle.rotation, local) + obstacle.center
    if isinstance(obstacle, geometry.Capsule):
        axis = obstacle.b - obstacle.a
        length = np.linalg.norm(axis)
        u = axis / length
        # orthonormal frame around the axis
        ref = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(u, ref)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(u, e1)
        ts = np.linspace(0.0, 1.0, n_per_axis)
        angs = np.linspace(0.0, 2 * np.pi, n_per_axis, endpoint=False)
        pts = []
        for t in ts:
            center = obstacle.a + t * axis
            for ang in angs:
                pts.append(center + obstacle.radius * (np.cos(ang) * e1 + np.sin(ang) * e2))
        return np.asarray(pts)
    raise geometry.GeometryError(f"unsupported obstacle type {type(obstacle).__name__}")
