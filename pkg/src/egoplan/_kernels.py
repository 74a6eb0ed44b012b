"""Fused numeric kernels for the two hot loops (JIT-compiled).

Array-at-a-time numpy needs several full passes over the
(waypoints x points x spheres) distance grid, which blows the latency
budgets on low-bandwidth machines; these loops touch each element once.
Both kernels are IEEE-strict (no fastmath), so their results feed the
exact-oracle tests unchanged.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def recip_grid(centers, radii, points, eps, out):
    """out[m, k] = 1 / max(min_s(|p_k - c_ms| - r_s), eps).

    The squared-distance lower bound skips the sqrt for spheres that
    cannot beat the current minimum; the result is exact.
    """
    M, S, _ = centers.shape
    K = points.shape[0]
    for m in range(M):
        for k in range(K):
            px, py, pz = points[k, 0], points[k, 1], points[k, 2]
            best = 1.0e300
            for s in range(S):
                dx = px - centers[m, s, 0]
                dy = py - centers[m, s, 1]
                dz = pz - centers[m, s, 2]
                d2 = dx * dx + dy * dy + dz * dz
                thr = best + radii[s]
                if thr > 0.0 and d2 >= thr * thr:
                    continue
                d = math.sqrt(d2) - radii[s]
                if d < best:
                    best = d
            out[m, k] = 1.0 / (best if best > eps else eps)


@njit(cache=True)
def min_sphere_clearance(centers, radii, points):
    """min over (points, spheres) of |p - c| - r; early-outs on penetration."""
    S = centers.shape[0]
    K = points.shape[0]
    best = 1.0e300
    for k in range(K):
        px, py, pz = points[k, 0], points[k, 1], points[k, 2]
        for s in range(S):
            dx = px - centers[s, 0]
            dy = py - centers[s, 1]
            dz = pz - centers[s, 2]
            d = math.sqrt(dx * dx + dy * dy + dz * dz) - radii[s]
            if d < best:
                best = d
        if best < 0.0:
            return best
    return best


@njit(cache=True)
def ray_spheres(centers, radii, origins, dirs, out):
    """Nearest positive hit distance per ray against a sphere bag
    (+inf on miss); used for the robot's self-geometry."""
    S = centers.shape[0]
    R = origins.shape[0]
    for i in range(R):
        ox, oy, oz = origins[i, 0], origins[i, 1], origins[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        best = np.inf
        for s in range(S):
            cx = ox - centers[s, 0]
            cy = oy - centers[s, 1]
            cz = oz - centers[s, 2]
            b = cx * dx + cy * dy + cz * dz
            c = cx * cx + cy * cy + cz * cz - radii[s] * radii[s]
            disc = b * b - c
            if disc < 0.0:
                continue
            sq = math.sqrt(disc)
            t = -b - sq
            if t <= 0.0:
                t = -b + sq
                if t <= 0.0:
                    continue
            if t < best:
                best = t
        out[i] = best
