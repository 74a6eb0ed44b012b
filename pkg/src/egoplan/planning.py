"""Collision-aware planning.

Three planners share one collision measure, the reciprocal-SDF
trajectory cost: for every waypoint and every cloud point, add
1 / max(robot_sdf, epsilon_min). The clamp keeps penetrating points at
a large finite penalty (the raw reciprocal is undefined at SDF <= 0).

- ``select_candidate``: inference-time optimization; pick the cheapest of
  N candidate trajectories (the candidates normally come from a policy,
  or from smooth random perturbations of a straight-line base).
- ``baseline_plan``: gradient trajectory optimization over the same cost
  plus smoothness and goal terms, with random-restart best-of.
- ``ExternalCandidateSource``: line-delimited request/response bridge to
  an out-of-process candidate generator, with a perturbation fallback.
"""

from __future__ import annotations

import json
import logging
import os
import select as _select
import socket
import subprocess
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, geometry, kinematics, sensing
from .seeds import seed_sequence

log = logging.getLogger(__name__)


class PlanningError(ValueError):
    pass


@dataclass(frozen=True)
class CostConfig:
    epsilon_min: float = 0.001
    horizon: int = 15
    w_collision: float = 0.002
    w_smooth: float = 1.0
    w_goal: float = 400.0

    def __post_init__(self):
        if self.epsilon_min <= 0:
            raise PlanningError("epsilon_min must be positive")
        if self.horizon < 2:
            raise PlanningError("horizon must be >= 2")
        if min(self.w_collision, self.w_smooth, self.w_goal) < 0:
            raise PlanningError("weights must be nonnegative")


@dataclass(frozen=True)
class CandidateSet:
    """N candidate trajectories sharing horizon and start configuration."""

    trajectories: np.ndarray  # (N, T, 14)
    provenance: str  # policy | perturbation | restart

    def __post_init__(self):
        arr = np.asarray(self.trajectories, dtype=float)
        if arr.ndim != 3 or arr.shape[2] != kinematics.NUM_JOINTS:
            raise PlanningError(f"candidates must have shape (N, T, 14), got {arr.shape}")
        if arr.shape[0] < 1:
            raise PlanningError("need at least one candidate")
        if not np.all(np.isfinite(arr)):
            raise PlanningError("candidates contain non-finite values")
        if not np.all(arr[:, 0, :] == arr[0, 0, :]):
            raise PlanningError("candidates must share the start configuration")
        if self.provenance not in ("policy", "perturbation", "restart"):
            raise PlanningError(f"unknown provenance {self.provenance!r}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "trajectories", arr)

    def __len__(self) -> int:
        return self.trajectories.shape[0]


@dataclass(frozen=True)
class PlanResult:
    trajectory: np.ndarray
    cost: dict
    iterations: int
    wall_time_s: float
    no_solution: bool


# --- reciprocal-SDF collision cost -----------------------------------------

def _waypoint_cost_terms(
    Q: np.ndarray,
    points: np.ndarray,
    model,
    cfg: CostConfig,
    want_grad: bool,
    centers: np.ndarray = None,
    jacs: np.ndarray = None,
):
    """Per-waypoint reciprocal-SDF sums (M,), and optionally the gradient
    of each sum w.r.t. its own waypoint (M, 14). `centers`/`jacs` may be
    passed in when the caller already ran FK."""
    M = Q.shape[0]
    if centers is None:
        frames = kinematics.fk_batch(model, Q)
        centers = kinematics.collision_spheres_traj(model, Q, frames)  # (M, S, 3)
        if want_grad and jacs is None:
            jacs = kinematics.sphere_jacobians_traj(model, Q, frames)
    elif want_grad and jacs is None:
        jacs = kinematics.sphere_jacobians_traj(model, Q)
    radii = kinematics.sphere_radii(model)
    S = centers.shape[1]
    K = points.shape[0]
    sums = np.empty(M)
    grads = np.zeros((M, kinematics.NUM_JOINTS)) if want_grad else None

    if not want_grad:
        # hot path (candidate scoring): fused kernel, one pass per element;
        # the per-waypoint totals then use numpy's pairwise summation
        recip = np.empty((M, K))
        _kernels.recip_grid(np.ascontiguousarray(centers), radii, np.ascontiguousarray(points), cfg.epsilon_min, recip)
        sums[:] = np.sum(recip, axis=1)
        return sums, None

    px, py, pz = points[:, 0], points[:, 1], points[:, 2]

    # process waypoints in blocks so the (B, K, S) temporaries stay small
    block = max(1, int(2_000_000 // max(K * S, 1)))
    for lo_idx in range(0, M, block):
        hi_idx = min(lo_idx + block, M)
        c = centers[lo_idx:hi_idx]  # (B, S, 3)
        B = hi_idx - lo_idx
        dx = px[None, :, None] - c[:, None, :, 0]
        dy = py[None, :, None] - c[:, None, :, 1]
        dz = pz[None, :, None] - c[:, None, :, 2]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)  # (B, K, S)
        sdf_all = dist - radii[None, None, :]
        if want_grad:
            s_star = np.argmin(sdf_all, axis=2)  # (B, K)
            take = np.take_along_axis
            sdf = take(sdf_all, s_star[..., None], axis=2)[..., 0]
        else:
            sdf = np.min(sdf_all, axis=2)
        u = np.maximum(sdf, cfg.epsilon_min)
        # contiguous rows get numpy's pairwise reduction, which keeps
        # point-duplication linearity exact
        sums[lo_idx:hi_idx] = np.sum(np.ascontiguousarray(1.0 / u), axis=1)
        if want_grad:
            live = sdf > cfg.epsilon_min
            coeff = np.where(live, 1.0 / (u * u * np.maximum(take(dist, s_star[..., None], axis=2)[..., 0], 1e-12)), 0.0)
            flat_star = (s_star + (np.arange(B) * S)[:, None]).reshape(-1)
            wx = (coeff * take(dx, s_star[..., None], axis=2)[..., 0]).reshape(-1)
            wy = (coeff * take(dy, s_star[..., None], axis=2)[..., 0]).reshape(-1)
            wz = (coeff * take(dz, s_star[..., None], axis=2)[..., 0]).reshape(-1)
            gx = np.bincount(flat_star, weights=wx, minlength=B * S)
            gy = np.bincount(flat_star, weights=wy, minlength=B * S)
            gz = np.bincount(flat_star, weights=wz, minlength=B * S)
            g_centers = np.stack([gx, gy, gz], axis=1).reshape(B, S, 3)
            grads[lo_idx:hi_idx] = np.einsum("msd,msdj->mj", g_centers, jacs[lo_idx:hi_idx])
    return sums, grads


def reciprocal_sdf_cost(traj, cloud: geometry.PointCloud, model, cfg: CostConfig) -> float:
    """Sum over waypoints and cloud points of 1 / max(robot_sdf, epsilon_min).

    The horizon is the length of the trajectory being scored; an empty
    cloud scores 0 (free space).
    """
    Q = kinematics.as_trajectory(traj)
    if len(cloud) == 0:
        return 0.0
    sums, _ = _waypoint_cost_terms(Q, cloud.points, model, cfg, want_grad=False)
    return float(np.sum(sums))


def select_candidate(cands: CandidateSet, cloud: geometry.PointCloud, model, cfg: CostConfig):
    """Index of the minimum-cost candidate (ties: lowest index) plus the
    full per-candidate cost vector."""
    N, T, _ = cands.trajectories.shape
    if T != cfg.horizon:
        raise PlanningError(f"candidate horizon {T} != configured horizon {cfg.horizon}")
    if len(cloud) == 0:
        costs = np.zeros(N)
    else:
        flat = cands.trajectories.reshape(N * T, kinematics.NUM_JOINTS)
        sums, _ = _waypoint_cost_terms(flat, cloud.points, model, cfg, want_grad=False)
        costs = np.array([np.sum(sums[i * T : (i + 1) * T]) for i in range(N)])
    return int(np.argmin(costs)), costs


def perturb_candidates(base, n: int, rng_seed: int, amplitude: float, model) -> CandidateSet:
    """Candidate 0 is the base; the rest add smooth zero-endpoint sine
    bumps per joint (random harmonic and signed amplitude), clamped to
    joint limits. Endpoints are preserved exactly."""
    base = kinematics.as_trajectory(base, "base")
    if n < 1:
        raise PlanningError("need at least one candidate")
    T = base.shape[0]
    gen = np.random.default_rng(seed_sequence(rng_seed, "perturb"))
    s = (np.arange(T) / (T - 1))[:, None]
    out = np.empty((n, T, kinematics.NUM_JOINTS))
    out[0] = base
    for i in range(1, n):
        # first two harmonics only: higher ones move too fast between
        # waypoints for the waypoint-sampled collision cost to vet
        harmonics = gen.integers(1, 3, size=kinematics.NUM_JOINTS)
        amps = gen.uniform(-amplitude, amplitude, size=kinematics.NUM_JOINTS)
        bump = amps * np.sin(np.pi * s * harmonics)
        bump[0] = 0.0
        bump[-1] = 0.0
        cand = kinematics.clamp_to_limits(model, base + bump)
        cand[0] = base[0]
        cand[-1] = base[-1]
        out[i] = cand
    return CandidateSet(out, "perturbation")


# --- baseline trajectory optimizer ------------------------------------------

def _objective(Q, cloud_points, goal_ee, model, cfg: CostConfig, want_grad: bool):
    """Weighted objective over the full (T, 14) trajectory and gradient
    w.r.t. the free waypoints 1..T-1 (the start stays pinned)."""
    T = Q.shape[0]
    grad = np.zeros((T, kinematics.NUM_JOINTS)) if want_grad else None
    frames = kinematics.fk_batch(model, Q)

    if cloud_points is not None and len(cloud_points):
        centers = kinematics.collision_spheres_traj(model, Q, frames)
        jacs = kinematics.sphere_jacobians_traj(model, Q, frames) if want_grad else None
        sums, g = _waypoint_cost_terms(Q, cloud_points, model, cfg, want_grad, centers, jacs)
        collision = float(np.sum(sums))
        if want_grad:
            grad += cfg.w_collision * g
    else:
        collision = 0.0

    diffs = np.diff(Q, axis=0)
    smooth = float(np.sum(diffs * diffs))
    if want_grad:
        grad[:-1] -= cfg.w_smooth * 2.0 * diffs
        grad[1:] += cfg.w_smooth * 2.0 * diffs

    goal = 0.0
    ee_last = {"left": frames.left.trans[-1, 7], "right": frames.right.trans[-1, 7]}
    for side, target in goal_ee.items():
        err = ee_last[side] - target
        goal += float(err @ err)
        if want_grad:
            grad[-1] += cfg.w_goal * 2.0 * (kinematics.ee_jacobian_from_frames(frames, T - 1, side).T @ err)

    total = cfg.w_collision * collision + cfg.w_smooth * smooth + cfg.w_goal * goal
    breakdown = {"collision": collision, "smooth": smooth, "goal": goal, "total": total}
    if want_grad:
        grad[0] = 0.0
    return total, breakdown, grad


def baseline_objective(traj, cloud: geometry.PointCloud, goal, model, cfg: CostConfig, want_grad: bool = True):
    """Public objective/gradient hook (also used by the gradient checks)."""
    Q = kinematics.as_trajectory(traj)
    goal_ee = {
        side: kinematics.end_effector_position(model, goal, side) for side in kinematics.SIDES
    }
    pts = cloud.points if len(cloud) else None
    return _objective(Q, pts, goal_ee, model, cfg, want_grad)


def _penetrates(Q, model, cloud, ground_truth, oversample=4):
    dense = Q if len(Q) < 2 else _oversample(Q, oversample)
    centers = kinematics.collision_spheres_traj(model, dense)
    radii = kinematics.sphere_radii(model)
    if ground_truth is not None:
        if not ground_truth.obstacles:
            return False
        sdf = geometry.sdf_batch(ground_truth, centers.reshape(-1, 3))
        return bool(np.min(sdf - np.tile(radii, dense.shape[0])) < 0.0)
    if cloud is None or len(cloud) == 0:
        return False
    for m in range(dense.shape[0]):
        if np.min(geometry.robot_sdf_batch(centers[m], radii, cloud.points)) < 0.0:
            return True
    return False


def _oversample(Q, factor):
    pieces = []
    for i in range(len(Q) - 1):
        seg = kinematics.linear_interpolate(Q[i], Q[i + 1], factor + 1)
        pieces.append(seg[:-1])
    pieces.append(Q[-1:])
    return np.concatenate(pieces)


def _good_enough(Q, goal_ee, model, cloud, goal_tol=0.03, clear_margin=0.01):
    """Goal reached and visibly clear of the cloud: restarts can stop."""
    frames = kinematics.fk_batch(model, Q[-1][None, :])
    for side, target in goal_ee.items():
        ee = (frames.left if side == "left" else frames.right).trans[0, 7]
        if float(np.linalg.norm(ee - target)) > goal_tol:
            return False
    if cloud is None or len(cloud) == 0:
        return True
    dense = _oversample(Q, 2)
    centers = kinematics.collision_spheres_traj(model, dense)
    radii = kinematics.sphere_radii(model)
    for m in range(dense.shape[0]):
        if np.min(geometry.robot_sdf_batch(centers[m], radii, cloud.points)) < clear_margin:
            return False
    return True


def baseline_plan(
    cloud: geometry.PointCloud,
    start,
    goal,
    model,
    cfg: CostConfig = CostConfig(),
    restarts: int = 4,
    rng_seed: int = 0,
    iterations: int = 150,
    learning_rate: float = 0.04,
    ground_truth: geometry.World = None,
) -> PlanResult:
    """Gradient-descent trajectory optimization from a straight-line seed.

    Minimizes w_collision * reciprocal-SDF cost + w_smooth * sum |dq|^2 +
    w_goal * squared end-effector goal error (start pinned, final
    waypoint free). Runs 1 + `restarts` optimizations (the extras from
    smoothly perturbed seeds) and keeps the lowest final objective. The
    result is flagged no-solution when the best trajectory still
    penetrates: against the ground-truth world when one is supplied
    (evaluation mode), else against the cloud points.
    """
    t_begin = time.perf_counter()
    start = kinematics.as_joint_vector(start, "start")
    goal = kinematics.as_joint_vector(goal, "goal")
    if kinematics.check_limits(model, start):
        raise PlanningError("start configuration violates joint limits")

    goal_ee = {side: kinematics.end_effector_position(model, goal, side) for side in kinematics.SIDES}
    base = kinematics.linear_interpolate(start, kinematics.clamp_to_limits(model, goal), cfg.horizon)
    pts = cloud.points if len(cloud) else None
    lo, hi = model.lower_limits, model.upper_limits

    best = None
    total_iters = 0
    for r in range(restarts + 1):
        if r == 0:
            Q = base.copy()
        else:
            seed = int(seed_sequence(rng_seed, "restart", r).generate_state(1)[0])
            Q = perturb_candidates(base, 2, seed, 0.35, model).trajectories[1].copy()

        m = np.zeros_like(Q)
        v = np.zeros_like(Q)
        best_local = None
        for it in range(iterations):
            total, breakdown, grad = _objective(Q, pts, goal_ee, model, cfg, want_grad=True)
            if best_local is None or total < best_local[0]:
                best_local = (total, breakdown, Q.copy())
            m = 0.9 * m + 0.1 * grad
            v = 0.999 * v + 0.001 * grad * grad
            step = learning_rate * m / (np.sqrt(v) + 1e-9)
            Q = Q - step
            Q[0] = start
            Q = np.clip(Q, lo, hi)
            total_iters += 1
            if it > 25 and float(np.abs(step).max()) < 5e-4:
                break
        total, breakdown, _ = _objective(Q, pts, goal_ee, model, cfg, want_grad=False)
        if total < best_local[0]:
            best_local = (total, breakdown, Q.copy())
        if best is None or best_local[0] < best[0]:
            best = best_local
        if r == 0 and _good_enough(best_local[2], goal_ee, model, cloud):
            # early accept keyed on the straight-seed solve only, so a
            # larger restart budget still returns the identical result
            break

    _, breakdown, Q = best
    no_solution = _penetrates(Q, model, cloud if len(cloud) else None, ground_truth)
    return PlanResult(
        trajectory=None if no_solution else Q,
        cost=breakdown,
        iterations=total_iters,
        wall_time_s=time.perf_counter() - t_begin,
        no_solution=no_solution,
    )


# --- candidate sources -------------------------------------------------------

class PerturbationSource:
    """Internal geometric candidate generator: smooth perturbations around
    the joint-space straight line from q to g."""

    def __init__(self, model, cfg: CostConfig, amplitude: float = 0.3, rng_seed: int = 0):
        self.model = model
        self.cfg = cfg
        self.amplitude = amplitude
        self.rng_seed = rng_seed
        self._calls = 0

    def request(self, q, g, obs, n: int) -> CandidateSet:
        base = kinematics.linear_interpolate(
            kinematics.as_joint_vector(q), kinematics.clamp_to_limits(self.model, g), self.cfg.horizon
        )
        seed = int(seed_sequence(self.rng_seed, "request", self._calls).generate_state(1)[0])
        self._calls += 1
        return perturb_candidates(base, n, seed, self.amplitude, self.model)


def observation_to_wire(obs: sensing.RigObservation) -> dict:
    return {
        "frames": [
            {"mount": c.mount_id, "zones": [[float(v) for v in row] for row in c.frame.zones]}
            for c in obs.captures
        ]
    }


class _LineChannel:
    """Line IO with a deadline over a unix socket or a child process's stdio."""

    def __init__(self, transport):
        kind, target = transport
        self._buf = b""
        self._proc = None
        self._sock = None
        if kind == "socket":
            self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            self._sock.connect(target)
        elif kind == "stdio":
            self._proc = subprocess.Popen(target, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        else:
            raise PlanningError(f"unknown transport kind {kind!r}")

    def send_line(self, line: str):
        data = line.encode("utf-8") + b"\n"
        if self._sock is not None:
            self._sock.sendall(data)
        else:
            self._proc.stdin.write(data)
            self._proc.stdin.flush()

    def recv_line(self, deadline: float) -> str:
        while True:
            idx = self._buf.find(b"\n")
            if idx >= 0:
                line = self._buf[:idx]
                self._buf = self._buf[idx + 1 :]
                return line.decode("utf-8")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("candidate source timed out")
            if self._sock is not None:
                self._sock.settimeout(remaining)
                try:
                    chunk = self._sock.recv(65536)
                except socket.timeout as exc:
                    raise TimeoutError("candidate source timed out") from exc
            else:
                fd = self._proc.stdout.fileno()
                ready, _, _ = _select.select([fd], [], [], remaining)
                if not ready:
                    raise TimeoutError("candidate source timed out")
                chunk = os.read(fd, 65536)
            if not chunk:
                raise ConnectionError("candidate source closed the stream")
            self._buf += chunk

    def close(self):
        if self._sock is not None:
            self._sock.close()
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.terminate()
            self._proc.wait(timeout=5)


class ExternalCandidateSource:
    """Bridge to an out-of-process candidate generator over the
    line-delimited stream protocol.

    Request:  {"v": 1, "id", "q": [14], "g": [14], "N", "T", "obs"}
    Response: N lines {"id", "index", "traj": [T][14]} then
              {"id", "done": true}

    Timeouts and malformed replies fall back to the internal
    perturbation source; every fallback is logged and counted.
    """

    def __init__(self, transport, model, cfg: CostConfig, timeout_s: float = 2.0, rng_seed: int = 0):
        self.transport = transport
        self.model = model
        self.cfg = cfg
        self.timeout_s = timeout_s
        self.fallback = PerturbationSource(model, cfg, rng_seed=rng_seed)
        self.fallback_events = 0
        self.last_error = None
        self._channel = None
        self._request_counter = 0

    def _ensure_channel(self) -> _LineChannel:
        if self._channel is None:
            self._channel = _LineChannel(self.transport)
        return self._channel

    def request(self, q, g, obs, n: int) -> CandidateSet:
        q = kinematics.as_joint_vector(q)
        g = kinematics.as_joint_vector(g, "g")
        request_id = f"req{self._request_counter}"
        self._request_counter += 1
        payload = {
            "v": 1,
            "id": request_id,
            "q": [float(x) for x in q],
            "g": [float(x) for x in g],
            "N": int(n),
            "T": int(self.cfg.horizon),
            "obs": observation_to_wire(obs) if obs is not None else None,
        }
        try:
            channel = self._ensure_channel()
            channel.send_line(json.dumps(payload))
            deadline = time.monotonic() + self.timeout_s
            slots = [None] * n
            got_done = False
            for _ in range(n + 1):
                reply = json.loads(channel.recv_line(deadline))
                if reply.get("id") != request_id:
                    raise PlanningError(f"reply id {reply.get('id')!r} does not match {request_id!r}")
                if reply.get("done"):
                    got_done = True
                    break
                idx = int(reply["index"])
                traj = np.asarray(reply["traj"], dtype=float)
                if traj.shape != (self.cfg.horizon, kinematics.NUM_JOINTS) or not np.all(np.isfinite(traj)):
                    raise PlanningError(f"candidate {idx} has bad shape or values")
                slots[idx] = traj
            if not got_done:
                reply = json.loads(channel.recv_line(deadline))
                if not reply.get("done"):
                    raise PlanningError("missing terminator line")
            if any(s is None for s in slots):
                raise PlanningError("response did not cover all candidate indices")
            cands = np.stack(slots)
            # policy outputs are unclamped by contract; limits are enforced here
            cands[:, 1:, :] = np.clip(cands[:, 1:, :], self.model.lower_limits, self.model.upper_limits)
            if not np.allclose(cands[:, 0, :], q, atol=1e-9):
                raise PlanningError("candidates do not start at the requested configuration")
            cands[:, 0, :] = q
            return CandidateSet(cands, "policy")
        except (OSError, TimeoutError, ConnectionError, ValueError, KeyError, PlanningError) as exc:
            self.fallback_events += 1
            self.last_error = str(exc)
            log.warning("external candidate source failed (%s); using perturbation fallback", exc)
            if self._channel is not None:
                try:
                    self._channel.close()
                except Exception:
                    pass
                self._channel = None
            return self.fallback.request(q, g, obs, n)

    def close(self):
        if self._channel is not None:
            self._channel.close()
            self._channel = None


@dataclass
class PlannerSpec:
    """Which planner to run and with what knobs; `bridge` names the
    external transport for ito-extern."""

    kind: str = "ito-perturb"  # baseline | ito-perturb | ito-extern
    candidates: int = 16
    restarts: int = 4
    amplitude: float = 0.3
    cfg: CostConfig = field(default_factory=CostConfig)
    bridge: tuple = None
    timeout_s: float = 2.0

    def __post_init__(self):
        if self.kind not in ("baseline", "ito-perturb", "ito-extern"):
            raise PlanningError(f"unknown planner kind {self.kind!r}")
        if self.kind == "ito-extern" and self.bridge is None:
            raise PlanningError("ito-extern requires a bridge transport")


def make_candidate_source(spec: PlannerSpec, model, rng_seed: int):
    if spec.kind == "ito-perturb":
        return PerturbationSource(model, spec.cfg, spec.amplitude, rng_seed)
    if spec.kind == "ito-extern":
        return ExternalCandidateSource(spec.bridge, model, spec.cfg, spec.timeout_s, rng_seed)
    raise PlanningError(f"{spec.kind} has no candidate source")


def plan_with_spec(spec: PlannerSpec, cloud, start, goal, model, rng_seed: int, obs=None, ground_truth=None):
    """Run the configured planner once; returns (PlanResult, info dict)."""
    if spec.kind == "baseline":
        result = baseline_plan(
            cloud, start, goal, model, spec.cfg, spec.restarts, rng_seed, ground_truth=ground_truth
        )
        return result, {"fallbacks": 0}

    source = make_candidate_source(spec, model, rng_seed)
    t0 = time.perf_counter()
    cands = source.request(start, goal, obs, spec.candidates)
    index, costs = select_candidate(cands, cloud, model, spec.cfg)
    wall = time.perf_counter() - t0
    result = PlanResult(
        trajectory=cands.trajectories[index].copy(),
        cost={"collision": float(costs[index]), "total": float(costs[index])},
        iterations=len(cands),
        wall_time_s=wall,
        no_solution=False,
    )
    info = {
        "fallbacks": getattr(source, "fallback_events", 0),
        "selected_index": index,
        "provenance": cands.provenance,
    }
    if hasattr(source, "close"):
        source.close()
    return result, info
