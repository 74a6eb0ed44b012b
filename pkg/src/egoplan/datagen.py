"""Expert demonstration generation.

Scenarios come in three flavors built around an expert joint-space
trajectory window:

- collision avoidance: replay a 1-second expert window with obstacles
  fitted tightly around (but clear of) the swept body volume;
- emergency stop: same obstacle fitting, but the goal configuration is
  driven into an obstacle, and the expert is truncated at the first
  frame that would collide (the stop label boundary);
- free motion: no obstacles, expert replaced by the joint-space
  straight line from start to goal.

Everything is a deterministic function of the seeds passed in, so a
batch regenerated with the same master seed is byte-identical on disk.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import geometry, kinematics, sensing
from .seeds import rng as seeded_rng
from .seeds import seed_sequence
from .transforms import quat_to_matrix, quat_from_rotvec

RATE_HZ = 15.0
CHUNK_LEN = 15
WINDOW_STEPS = 15  # the goal sits this many steps past the start (1 s)
MAX_STEP_DELTA = 0.5  # rad, continuity bound between consecutive waypoints


class DatagenError(ValueError):
    pass


class ScenarioDiscarded(RuntimeError):
    """Raised when a scenario cannot be realized; carries the reason."""


@dataclass(frozen=True)
class ExpertTrajectory:
    waypoints: np.ndarray
    source: str = "synthetic"
    rate_hz: float = RATE_HZ

    def __post_init__(self):
        wp = kinematics.as_trajectory(self.waypoints, "expert waypoints").copy()
        wp.flags.writeable = False
        object.__setattr__(self, "waypoints", wp)
        if self.source not in ("synthetic", "imported"):
            raise DatagenError(f"unknown expert source {self.source!r}")

    def __len__(self) -> int:
        return self.waypoints.shape[0]


class ScenarioKind(enum.Enum):
    COLLISION_AVOIDANCE = "collision_avoidance"
    EMERGENCY_STOP = "emergency_stop"
    FREE_MOTION = "free_motion"


@dataclass(frozen=True)
class Scenario:
    kind: ScenarioKind
    start: np.ndarray
    goal: np.ndarray
    world: geometry.World
    expert: ExpertTrajectory
    seed: int
    scenario_id: str

    def __post_init__(self):
        object.__setattr__(self, "start", kinematics.as_joint_vector(self.start, "start"))
        object.__setattr__(self, "goal", kinematics.as_joint_vector(self.goal, "goal"))


def validate_expert(expert: ExpertTrajectory, model) -> None:
    lo, hi = model.lower_limits, model.upper_limits
    wp = expert.waypoints
    if np.any(wp < lo - 1e-12) or np.any(wp > hi + 1e-12):
        raise DatagenError("expert trajectory leaves the joint limits")
    if len(wp) > 1:
        deltas = np.abs(np.diff(wp, axis=0)).max()
        if deltas >= MAX_STEP_DELTA:
            raise DatagenError(f"expert continuity violated: max step {deltas:.3f} rad")


def oversample_trajectory(waypoints: np.ndarray, factor: int) -> np.ndarray:
    """Linear joint-space interpolation at `factor` subdivisions per step."""
    wp = np.asarray(waypoints, dtype=float)
    if len(wp) < 2 or factor <= 1:
        return wp.copy()
    pieces = []
    for i in range(len(wp) - 1):
        seg = kinematics.linear_interpolate(wp[i], wp[i + 1], factor + 1)
        pieces.append(seg[:-1])
    pieces.append(wp[-1:])
    return np.concatenate(pieces)


# --- retargeting ------------------------------------------------------------

@dataclass(frozen=True)
class ArmAxisAngles:
    """Human-side per-joint rotation vectors (axis * angle, radians)."""

    collar: np.ndarray
    shoulder: np.ndarray
    elbow: np.ndarray
    wrist: np.ndarray

    def __post_init__(self):
        for name in ("collar", "shoulder", "elbow", "wrist"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(v)):
                raise DatagenError(f"{name} rotation vector must be finite")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class HumanFrame:
    left: ArmAxisAngles
    right: ArmAxisAngles


@dataclass(frozen=True)
class RetargetResult:
    q: np.ndarray
    clamped: tuple
    gimbal: tuple


GIMBAL_EPS = 1e-6


def _euler_pitch_roll_yaw(r: np.ndarray):
    """Decompose R = Ry(pitch) * Rx(roll) * Rz(yaw).

    Near the roll singularity (|roll| ~ pi/2) pitch and yaw are coupled;
    we resolve with the zero-yaw convention and flag the frame.
    """
    roll = float(np.arcsin(np.clip(-r[1, 2], -1.0, 1.0)))
    if abs(abs(roll) - np.pi / 2) < GIMBAL_EPS:
        yaw = 0.0
        if roll > 0:
            pitch = float(np.arctan2(r[0, 1], r[0, 0]))
        else:
            pitch = float(np.arctan2(-r[0, 1], r[0, 0]))
        return pitch, roll, yaw, True
    pitch = float(np.arctan2(r[0, 2], r[2, 2]))
    yaw = float(np.arctan2(r[1, 0], r[1, 1]))
    return pitch, roll, yaw, False


def retarget_frame(frame: HumanFrame, model) -> RetargetResult:
    """Map human collar/shoulder/elbow/wrist rotations onto the 14 robot joints.

    Elbow and wrist motors take the rotation-vector component about their
    own hinge axis directly; the shoulder triplet comes from an intrinsic
    pitch-roll-yaw decomposition of the composed collar*shoulder rotation.
    The result is clamped to the model's limits and clamp events reported.
    """
    q = np.zeros(kinematics.NUM_JOINTS)
    gimbal = []
    for side_idx, (side, human) in enumerate((("left", frame.left), ("right", frame.right))):
        arm = model.left if side == "left" else model.right
        r = quat_to_matrix(quat_from_rotvec(human.collar)) @ quat_to_matrix(quat_from_rotvec(human.shoulder))
        pitch, roll, yaw, degenerate = _euler_pitch_roll_yaw(r)
        if degenerate:
            gimbal.append(side)
        base = side_idx * kinematics.JOINTS_PER_ARM
        q[base + 0] = pitch
        q[base + 1] = roll
        q[base + 2] = yaw
        q[base + 3] = float(human.elbow @ arm.links[3].axis)
        q[base + 4] = float(human.wrist @ arm.links[4].axis)
        q[base + 5] = float(human.wrist @ arm.links[5].axis)
        q[base + 6] = float(human.wrist @ arm.links[6].axis)

    clamped_q = kinematics.clamp_to_limits(model, q)
    clamped = tuple(int(i) for i in np.flatnonzero(clamped_q != q))
    return RetargetResult(clamped_q, clamped, tuple(gimbal))


# --- synthetic experts --------------------------------------------------------

@dataclass(frozen=True)
class SynthStyle:
    components: int = 3
    max_amplitude: float = 0.4
    max_frequency_hz: float = 0.5


def synth_trajectory(rng_seed: int, duration_s: float, style: SynthStyle, model) -> ExpertTrajectory:
    """Smooth sum-of-sinusoids joint trajectory at 15 Hz, within limits.

    With `duration_s` = 1 the trajectory has exactly 15 waypoints. Low
    frequencies (<= max_frequency_hz) keep consecutive steps well under
    the 0.5 rad continuity bound.
    """
    if duration_s < 1.0:
        raise DatagenError("duration must be at least 1 s")
    n = int(round(duration_s * RATE_HZ))
    gen = np.random.default_rng(seed_sequence(rng_seed, "synth"))
    lo, hi = model.lower_limits, model.upper_limits
    t = np.arange(n) / RATE_HZ

    waypoints = np.empty((n, kinematics.NUM_JOINTS))
    for j in range(kinematics.NUM_JOINTS):
        amps = gen.uniform(0.0, style.max_amplitude / max(style.components, 1), size=style.components)
        freqs = gen.uniform(0.05, style.max_frequency_hz, size=style.components)
        phases = gen.uniform(0.0, 2 * np.pi, size=style.components)
        total = float(np.sum(amps))
        budget = 0.45 * (hi[j] - lo[j])
        if total > budget:
            amps *= budget / total
            total = budget
        center = gen.uniform(lo[j] + total, hi[j] - total)
        waypoints[:, j] = center + np.sum(amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None]), axis=0)
    expert = ExpertTrajectory(waypoints, source="synthetic")
    validate_expert(expert, model)
    return expert


# --- import of humanoid retargeting streams -----------------------------------

@dataclass(frozen=True)
class ImportResult:
    trajectory: ExpertTrajectory
    clamp_rate: float
    gimbal_frames: int
    warnings: tuple


def _parse_arm(node: dict, line: int) -> ArmAxisAngles:
    try:
        return ArmAxisAngles(
            collar=np.asarray(node["collar"], dtype=float),
            shoulder=np.asarray(node["shoulder"], dtype=float),
            elbow=np.asarray(node["elbow"], dtype=float),
            wrist=np.asarray(node["wrist"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatagenError(f"line {line}: malformed arm record: {exc}") from exc


def import_trajectory(lines, model) -> ImportResult:
    """Parse a line-delimited human-frame stream and retarget to 15 Hz.

    The first line is a header carrying the source rate; each following
    line is one frame of per-joint axis-angle triples for both arms.
    Frames are retargeted, then linearly resampled in joint space.
    """
    import json

    it = iter(enumerate(lines, start=1))
    rate = None
    for lineno, raw in it:
        raw = raw.strip()
        if not raw:
            continue
        try:
            header = json.loads(raw)
            rate = float(header["rate_hz"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatagenError(f"line {lineno}: expected header with rate_hz: {exc}") from exc
        break
    if rate is None or rate <= 0:
        raise DatagenError("stream has no valid rate header")

    frames_q = []
    clamp_events = 0
    gimbal_frames = 0
    for lineno, raw in it:
        raw = raw.strip()
        if not raw:
            continue
        try:
            node = json.loads(raw)
            frame = HumanFrame(_parse_arm(node["left"], lineno), _parse_arm(node["right"], lineno))
        except DatagenError:
            raise
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatagenError(f"line {lineno}: malformed frame: {exc}") from exc
        result = retarget_frame(frame, model)
        frames_q.append(result.q)
        clamp_events += bool(result.clamped)
        gimbal_frames += bool(result.gimbal)
    if not frames_q:
        raise DatagenError("stream contains no frames")

    src = np.asarray(frames_q)
    src_t = np.arange(len(src)) / rate
    n_out = int(np.floor(src_t[-1] * RATE_HZ + 1e-9)) + 1
    out_t = np.arange(n_out) / RATE_HZ
    resampled = np.empty((n_out, kinematics.NUM_JOINTS))
    for j in range(kinematics.NUM_JOINTS):
        resampled[:, j] = np.interp(out_t, src_t, src[:, j])

    clamp_rate = clamp_events / len(src)
    warnings = []
    if clamp_rate > 0.20:
        warnings.append(f"limit clamping affected {clamp_rate:.0%} of source frames")
    trajectory = ExpertTrajectory(resampled, source="imported")
    validate_expert(trajectory, model)
    return ImportResult(trajectory, clamp_rate, gimbal_frames, tuple(warnings))


# --- obstacle placement -------------------------------------------------------

@dataclass(frozen=True)
class ObstacleParams:
    count_range: tuple = (3, 8)
    clearance_min: float = 0.02
    clearance_max: float = 0.10
    shape_weights: tuple = (0.5, 0.3, 0.2)  # box, sphere, capsule
    size_range: tuple = (0.05, 0.30)
    max_fit_iters: int = 50
    max_total_attempts: int = 500
    oversample: int = 10


def _build_obstacle(kind: int, size_params: dict, center: np.ndarray, scale: float):
    if kind == 0:
        return geometry.Box(center, size_params["half"] * scale, size_params["quat"])
    if kind == 1:
        return geometry.Sphere(center, size_params["radius"] * scale)
    half_axis = size_params["axis"] * size_params["length"] * scale / 2.0
    return geometry.Capsule(center - half_axis, center + half_axis, size_params["radius"] * scale)


def _sample_shape(gen, params: ObstacleParams):
    lo, hi = params.size_range
    kind = int(gen.choice(3, p=np.asarray(params.shape_weights) / np.sum(params.shape_weights)))
    if kind == 0:
        axis = gen.normal(size=3)
        axis /= np.linalg.norm(axis)
        quat = np.concatenate([[np.cos(a := gen.uniform(0, np.pi)) ], np.sin(a) * axis])
        size_params = {"half": gen.uniform(lo, hi, size=3) / 2.0, "quat": quat / np.linalg.norm(quat)}
        reach = float(np.linalg.norm(size_params["half"]))
    elif kind == 1:
        size_params = {"radius": gen.uniform(lo, hi) / 2.0}
        reach = size_params["radius"]
    else:
        axis = gen.normal(size=3)
        axis /= np.linalg.norm(axis)
        size_params = {
            "axis": axis,
            "length": gen.uniform(lo, hi),
            "radius": max(gen.uniform(lo, hi) / 4.0, 0.02),
        }
        reach = size_params["length"] / 2.0 + size_params["radius"]
    return kind, size_params, reach


def place_obstacles(expert: ExpertTrajectory, model, rng_seed: int, params: ObstacleParams = ObstacleParams()) -> geometry.World:
    """Fit obstacles around the expert's swept volume.

    Every placed obstacle ends with its minimum distance to the robot
    body, over the 10x-oversampled trajectory, inside
    [clearance_min, clearance_max]. Placement anchors a random offset
    direction on a random body sphere and walks the obstacle along it
    (shrinking it when it penetrates) until the clearance band is met;
    exceeding the attempt budget discards the scenario.
    """
    gen = np.random.default_rng(seed_sequence(rng_seed, "obstacles"))
    dense = oversample_trajectory(expert.waypoints, params.oversample)
    centers = kinematics.collision_spheres_traj(model, dense).reshape(-1, 3)
    radii = np.tile(kinematics.sphere_radii(model), dense.shape[0])

    accept_lo = params.clearance_min
    accept_hi = params.clearance_max if params.clearance_max > params.clearance_min else params.clearance_min + 5e-4
    target = 0.5 * (accept_lo + accept_hi)

    count = int(gen.integers(params.count_range[0], params.count_range[1] + 1))
    obstacles = []
    attempts = 0
    while len(obstacles) < count:
        if attempts >= params.max_total_attempts:
            raise ScenarioDiscarded(
                f"obstacle placement exhausted after {attempts} attempts ({len(obstacles)}/{count} placed)"
            )
        attempts += 1
        kind, size_params, reach = _sample_shape(gen, params)
        anchor = int(gen.integers(centers.shape[0]))
        u = gen.normal(size=3)
        u /= np.linalg.norm(u)
        center = centers[anchor] + u * (radii[anchor] + target + reach)
        scale = 1.0

        placed = None
        for _ in range(params.max_fit_iters):
            candidate = _build_obstacle(kind, size_params, center, scale)
            clearance = float(np.min(geometry.sdf_obstacle(candidate, centers) - radii))
            if accept_lo <= clearance <= accept_hi:
                placed = candidate
                break
            if clearance < 0.0:
                scale = max(scale * 0.85, 0.2)
            center = center + u * (target - clearance)
        if placed is not None:
            obstacles.append(placed)
    return geometry.make_world(obstacles)


# --- scenario construction ----------------------------------------------------

@dataclass(frozen=True)
class ScenarioParams:
    obstacles: ObstacleParams = field(default_factory=ObstacleParams)
    stop_goal_tries: int = 200
    stop_depth: float = 1e-3  # required EE penetration depth at the stop goal


def _robot_penetrates(model, world: geometry.World, q) -> bool:
    centers, radii = kinematics.collision_spheres_at(model, q)
    if not world.obstacles:
        return False
    return bool(np.min(geometry.sdf_batch(world, centers) - radii) < 0.0)


def _stop_goal(world, model, q_end, gen, params: ScenarioParams):
    """Perturb the window's end pose until a hand lands inside an obstacle."""
    ee_left = kinematics.end_effector_position(model, q_end, "left")
    ee_right = kinematics.end_effector_position(model, q_end, "right")
    dist_left = min(float(geometry.sdf_obstacle(o, ee_left[None])[0]) for o in world.obstacles)
    dist_right = min(float(geometry.sdf_obstacle(o, ee_right[None])[0]) for o in world.obstacles)
    side = "left" if dist_left <= dist_right else "right"
    ee0 = ee_left if side == "left" else ee_right
    obstacle = min(world.obstacles, key=lambda o: float(geometry.sdf_obstacle(o, ee0[None])[0]))

    for attempt in range(params.stop_goal_tries):
        if isinstance(obstacle, geometry.Sphere):
            target = obstacle.center + gen.uniform(-0.4, 0.4, 3) * obstacle.radius
        elif isinstance(obstacle, geometry.Box):
            local = gen.uniform(-0.4, 0.4, 3) * obstacle.half_extents
            target = obstacle.center + quat_to_matrix(obstacle.rotation) @ local
        else:
            s = gen.uniform(0.2, 0.8)
            target = obstacle.a + s * (obstacle.b - obstacle.a) + gen.uniform(-0.3, 0.3, 3) * obstacle.radius

        q = np.array(q_end, dtype=float)
        if attempt > 0:
            jitter = gen.normal(0.0, 0.05, kinematics.JOINTS_PER_ARM)
            cols = slice(0, 7) if side == "left" else slice(7, 14)
            q[cols] += jitter
            q = kinematics.clamp_to_limits(model, q)
        for _ in range(12):
            ee = kinematics.end_effector_position(model, q, side)
            if geometry.sdf_point(world, ee) < -params.stop_depth:
                return q, side
            err = target - ee
            jac = kinematics.ee_jacobian(model, q, side)
            jjt = jac @ jac.T + 1e-6 * np.eye(3)
            step = jac.T @ np.linalg.solve(jjt, err)
            norm = float(np.linalg.norm(step))
            if norm > 0.4:
                step *= 0.4 / norm
            q = kinematics.clamp_to_limits(model, q + step)
        ee = kinematics.end_effector_position(model, q, side)
        if geometry.sdf_point(world, ee) < -params.stop_depth:
            return q, side
    raise ScenarioDiscarded(f"stop goal search exhausted after {params.stop_goal_tries} tries")


def make_scenario(
    expert: ExpertTrajectory,
    kind: ScenarioKind,
    rng_seed: int,
    model,
    params: ScenarioParams = ScenarioParams(),
    scenario_id: str = None,
) -> Scenario:
    """Cut a 1-second window out of the expert and realize one scenario kind."""
    validate_expert(expert, model)
    n = len(expert)
    if n < WINDOW_STEPS + 1:
        raise DatagenError(f"expert must span at least {WINDOW_STEPS + 1} waypoints, got {n}")
    gen = np.random.default_rng(seed_sequence(rng_seed, "window"))
    t0 = int(gen.integers(0, n - WINDOW_STEPS))
    window = expert.waypoints[t0 : t0 + WINDOW_STEPS + 1]
    start = window[0]
    goal = window[-1]
    scenario_id = scenario_id or f"{kind.value}-{rng_seed & 0xFFFFFFFF:08x}"

    if kind is ScenarioKind.FREE_MOTION:
        world = geometry.make_world([])
        traj = kinematics.linear_interpolate(start, goal, WINDOW_STEPS)
        return Scenario(kind, start, goal, world, ExpertTrajectory(traj, expert.source), rng_seed, scenario_id)

    window_expert = ExpertTrajectory(window, expert.source)
    world = place_obstacles(window_expert, model, rng_seed, params.obstacles)

    if kind is ScenarioKind.COLLISION_AVOIDANCE:
        return Scenario(kind, start, goal, world, window_expert, rng_seed, scenario_id)

    # emergency stop
    stop_gen = np.random.default_rng(seed_sequence(rng_seed, "stop_goal"))
    stop_goal, _ = _stop_goal(world, model, goal, stop_gen, params)
    steps = max(WINDOW_STEPS + 1, int(np.ceil(np.abs(stop_goal - goal).max() / 0.4)) + 2)
    approach = kinematics.linear_interpolate(goal, stop_goal, steps)[1:]
    full = np.concatenate([window, approach])
    centers = kinematics.collision_spheres_traj(model, full)
    clear = geometry.sdf_batch(world, centers.reshape(-1, 3)) - np.tile(kinematics.sphere_radii(model), len(full))
    colliding = np.flatnonzero(clear.reshape(len(full), -1).min(axis=1) < 0.0)
    if colliding.size == 0:
        raise ScenarioDiscarded("stop goal never produced a colliding approach frame")
    collide_idx = int(colliding[0])
    truncated = ExpertTrajectory(full[:collide_idx], expert.source)
    return Scenario(kind, start, stop_goal, world, truncated, rng_seed, scenario_id)


# --- verification ---------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


@dataclass(frozen=True)
class VerifyReport:
    checks: tuple

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.ok]


def verify_scenario(scenario: Scenario, model, params: ScenarioParams = ScenarioParams()) -> VerifyReport:
    """Independently re-check every scenario invariant."""
    checks = []
    wp = scenario.expert.waypoints
    lo, hi = model.lower_limits, model.upper_limits

    within = np.all(wp >= lo - 1e-12) and np.all(wp <= hi + 1e-12)
    checks.append(CheckResult("joint_limits", bool(within)))

    if len(wp) > 1:
        max_delta = float(np.abs(np.diff(wp, axis=0)).max())
        checks.append(CheckResult("continuity", max_delta < MAX_STEP_DELTA, f"max step {max_delta:.3f}"))

    if scenario.kind in (ScenarioKind.COLLISION_AVOIDANCE, ScenarioKind.FREE_MOTION):
        ok = np.allclose(wp[0], scenario.start, atol=1e-9) and np.allclose(wp[-1], scenario.goal, atol=1e-9)
        checks.append(CheckResult("endpoints", bool(ok)))

    if scenario.kind is ScenarioKind.COLLISION_AVOIDANCE:
        dense = oversample_trajectory(wp, params.obstacles.oversample)
        centers = kinematics.collision_spheres_traj(model, dense).reshape(-1, 3)
        radii = np.tile(kinematics.sphere_radii(model), dense.shape[0])
        clearance = float(np.min(geometry.sdf_batch(scenario.world, centers) - radii))
        checks.append(
            CheckResult(
                "clearance_band",
                clearance >= params.obstacles.clearance_min - 1e-9,
                f"min clearance {clearance:.4f}",
            )
        )
        frame_sdf = geometry.sdf_batch(scenario.world, kinematics.collision_spheres_traj(model, wp).reshape(-1, 3))
        frame_clear = frame_sdf - np.tile(kinematics.sphere_radii(model), wp.shape[0])
        bad = np.flatnonzero(frame_clear.reshape(wp.shape[0], -1).min(axis=1) < 0)
        checks.append(
            CheckResult(
                "expert_collision_free",
                bad.size == 0,
                "" if bad.size == 0 else f"expert collision at frame {int(bad[0])}",
            )
        )

    if scenario.kind is ScenarioKind.EMERGENCY_STOP:
        inside = min(
            geometry.sdf_point(scenario.world, kinematics.end_effector_position(model, scenario.goal, side))
            for side in ("left", "right")
        )
        checks.append(CheckResult("goal_inside_obstacle", inside < 0.0, f"goal EE sdf {inside:.4f}"))
        collisions = [i for i, q in enumerate(wp) if _robot_penetrates(model, scenario.world, q)]
        checks.append(
            CheckResult(
                "truncated_before_contact",
                not collisions,
                "" if not collisions else f"expert collision at frame {collisions[0]}",
            )
        )

    if scenario.kind is ScenarioKind.FREE_MOTION:
        checks.append(CheckResult("world_empty", len(scenario.world.obstacles) == 0))
        straight = kinematics.linear_interpolate(scenario.start, scenario.goal, len(wp))
        checks.append(CheckResult("straight_line_expert", bool(np.allclose(wp, straight, atol=1e-9))))

    return VerifyReport(tuple(checks))


# --- batch generation -----------------------------------------------------------

KIND_TAGS = {
    ScenarioKind.COLLISION_AVOIDANCE: "ca",
    ScenarioKind.EMERGENCY_STOP: "stop",
    ScenarioKind.FREE_MOTION: "free",
}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


@dataclass
class GenStats:
    requested: int = 0
    produced: int = 0
    discarded: list = field(default_factory=list)
    kind_counts: dict = field(default_factory=dict)


def generate_scenarios(
    model,
    count: int,
    mix: dict,
    master_seed: int,
    params: ScenarioParams = ScenarioParams(),
    style: SynthStyle = SynthStyle(),
    expert_duration_s: float = 3.0,
):
    """Deterministic batch generation; discarded attempts are retried with
    fresh derived seeds and recorded in the returned stats."""
    kinds = list(mix.keys())
    weights = np.array([mix[k] for k in kinds], dtype=float)
    weights /= weights.sum()
    stats = GenStats(requested=count)
    scenarios = []
    for i in range(count):
        kind_gen = seeded_rng(master_seed, "kind", i)
        kind = kinds[int(kind_gen.choice(len(kinds), p=weights))]
        scenario = None
        for retry in range(20):
            seed = int(seed_sequence(master_seed, "scenario", i, retry).generate_state(1)[0])
            expert = synth_trajectory(
                int(seed_sequence(master_seed, "expert", i, retry).generate_state(1)[0]),
                expert_duration_s,
                style,
                model,
            )
            try:
                scenario = make_scenario(
                    expert,
                    kind,
                    seed,
                    model,
                    params,
                    scenario_id=f"{KIND_TAGS[kind]}-{master_seed & 0xFFFFFFFF:08x}-{i:05d}",
                )
                break
            except ScenarioDiscarded as exc:
                stats.discarded.append((f"{KIND_TAGS[kind]}-{i:05d}-r{retry}", str(exc)))
        if scenario is None:
            raise DatagenError(f"scenario {i} failed after 20 retries")
        scenarios.append(scenario)
        stats.produced += 1
        stats.kind_counts[KIND_TAGS[kind]] = stats.kind_counts.get(KIND_TAGS[kind], 0) + 1
    return scenarios, stats


# --- dataset records ------------------------------------------------------------

@dataclass(frozen=True)
class DatasetRecord:
    scenario_id: str
    t: int
    q: np.ndarray
    g: np.ndarray
    chunk: np.ndarray
    observation: sensing.RigObservation


def action_chunk(waypoints: np.ndarray, t: int, length: int = CHUNK_LEN) -> np.ndarray:
    """The next `length` waypoints after index t, padded by holding the
    final pose."""
    future = waypoints[t + 1 : t + 1 + length]
    if len(future) < length:
        pad = np.repeat(waypoints[-1][None, :], length - len(future), axis=0)
        future = np.concatenate([future, pad]) if len(future) else pad
    return future


def iter_dataset_records(
    scenario: Scenario,
    model,
    noise: sensing.NoiseParams,
    rng_seed: int,
    layout: sensing.RigLayout = None,
):
    """One record per expert timestep: noisy egocentric observation at the
    current pose plus the goal and the next-chunk supervision target."""
    layout = layout or sensing.default_rig_layout()
    wp = scenario.expert.waypoints
    for t in range(len(wp)):
        frame_seed = int(seed_sequence(rng_seed, scenario.scenario_id, t).generate_state(1)[0])
        obs = sensing.render_rig(
            scenario.world, model, wp[t], "egocentric", layout, noise, rng_seed=frame_seed, t_index=t
        )
        yield DatasetRecord(
            scenario_id=scenario.scenario_id,
            t=t,
            q=wp[t],
            g=scenario.goal,
            chunk=action_chunk(wp, t),
            observation=obs,
        )


def write_dataset(scenarios, model, noise, rng_seed, out_dir, layout=None):
    """Write records.jsonl plus the frames.bin sidecar; returns record count."""
    import os

    from . import formats

    os.makedirs(out_dir, exist_ok=True)
    records_path = os.path.join(out_dir, "records.jsonl")
    frames_path = os.path.join(out_dir, "frames.bin")
    n_records = 0
    with open(records_path, "w", encoding="utf-8") as rec_fh, formats.DepthBatchWriter(frames_path) as writer:
        obs_ref = 0
        for scenario in scenarios:
            for record in iter_dataset_records(scenario, model, noise, rng_seed, layout):
                for capture in record.observation.captures:
                    writer.add_frame(capture.mount_id, record.t, capture.pose, capture.frame.zones)
                node = {
                    "scenario_id": record.scenario_id,
                    "t": record.t,
                    "q": [float(v) for v in record.q],
                    "g": [float(v) for v in record.g],
                    "chunk": [[float(v) for v in row] for row in record.chunk],
                    "obs_ref": obs_ref,
                }
                rec_fh.write(formats.dumps_record(node))
                rec_fh.write("\n")
                obs_ref += 1
                n_records += 1
    return n_records
