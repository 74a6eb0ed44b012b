"""Benchmark protocol: run scenario suites under either perception rig
and any planner, score against ground truth, and compare runs.

Per trial: render the rig at the scenario's start configuration,
deproject to a point cloud (exocentric clouds are pruned to the
10,000-point budget), plan once, and play the returned trajectory open
loop. Success is the hand reaching within 10 cm of the goal hand
position (judged per moving arm); collisions are counted against the
ground-truth world at 4x temporal oversampling. Latency is the wall
time of the planner call alone.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import datagen, geometry, kinematics, planning, sensing
from .seeds import fingerprint, seed_sequence

SUCCESS_RADIUS_M = 0.10
MOVING_ARM_EPS = 1e-6
COLLISION_OVERSAMPLE = 4


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class TrialOutcome:
    scenario_id: str
    executed: np.ndarray
    collision_frames: int
    collided: bool
    success: bool
    latency_ms: float
    no_solution: bool
    fallbacks: int = 0

    def __post_init__(self):
        if self.collided != (self.collision_frames > 0):
            raise EvaluationError("collided flag must mirror collision_frames > 0")
        if self.no_solution and self.success:
            raise EvaluationError("a no-solution trial cannot be successful")


@dataclass(frozen=True)
class SuiteReport:
    rows: tuple
    rig: str
    planner: str
    master_seed: int
    config_fingerprint: str

    @property
    def collision_rate(self) -> float:
        return sum(r.collided for r in self.rows) / len(self.rows)

    @property
    def success_rate(self) -> float:
        return sum(r.success for r in self.rows) / len(self.rows)

    @property
    def no_solution_rate(self) -> float:
        return sum(r.no_solution for r in self.rows) / len(self.rows)

    @property
    def mean_latency_ms(self) -> float:
        return sum(r.latency_ms for r in self.rows) / len(self.rows)

    @property
    def median_latency_ms(self) -> float:
        return statistics.median(r.latency_ms for r in self.rows)


def judge_success(model, executed, goal) -> bool:
    """True iff every moving arm's hand ends within 10 cm of its goal
    position. An arm counts as moving when any of its joints differs
    from the start by more than 1e-6 rad."""
    executed = kinematics.as_trajectory(executed, "executed")
    goal = kinematics.as_joint_vector(goal, "goal")
    start = executed[0]
    ok = True
    for side, cols in (("left", slice(0, 7)), ("right", slice(7, 14))):
        if np.max(np.abs(goal[cols] - start[cols])) <= MOVING_ARM_EPS:
            continue
        reached = kinematics.end_effector_position(model, executed[-1], side)
        target = kinematics.end_effector_position(model, goal, side)
        ok &= float(np.linalg.norm(reached - target)) <= SUCCESS_RADIUS_M
    return ok


def count_collisions(executed, world: geometry.World, model, oversample: int = COLLISION_OVERSAMPLE):
    """(colliding frame count, any) against the ground-truth world,
    sampled at `oversample` subdivisions per waypoint step."""
    executed = kinematics.as_trajectory(executed, "executed")
    if not world.obstacles:
        return 0, False
    dense = datagen.oversample_trajectory(executed, oversample)
    centers = kinematics.collision_spheres_traj(model, dense)
    radii = kinematics.sphere_radii(model)
    clear = geometry.sdf_batch(world, centers.reshape(-1, 3)) - np.tile(radii, dense.shape[0])
    frame_hits = clear.reshape(dense.shape[0], -1).min(axis=1) < 0.0
    count = int(np.sum(frame_hits))
    return count, count > 0


def _observe(scenario, q, rig, model, layout, noise, seed, prune_max):
    obs = sensing.render_rig(scenario.world, model, q, rig, layout, noise, rng_seed=seed)
    cloud = sensing.deproject(obs)
    if rig == "exocentric":
        cloud = geometry.prune_pointcloud(cloud, model, q, prune_max, seed)
    return obs, cloud


def _closed_loop(scenario, rig, spec, seed, model, layout, noise, prune_max):
    """Replan from the current configuration at every control step and
    execute only the first action of each plan."""
    q = scenario.start
    executed = [q]
    wall = 0.0
    steps = 0
    for step in range(spec.cfg.horizon - 1):
        step_seed = int(seed_sequence(seed, "step", step).generate_state(1)[0])
        obs, cloud = _observe(scenario, q, rig, model, layout, noise, step_seed, prune_max)
        result, info = planning.plan_with_spec(
            spec, cloud, q, scenario.goal, model, step_seed,
            obs=obs if rig == "egocentric" else None,
            ground_truth=scenario.world,
        )
        wall += result.wall_time_s
        steps += 1
        if result.no_solution or result.trajectory is None:
            break  # hold: no further motion this trial
        q = result.trajectory[1]
        executed.append(q)
    return np.asarray(executed), wall / max(steps, 1), info


def run_suite(
    scenarios,
    rig: str,
    spec: planning.PlannerSpec,
    master_seed: int,
    model,
    layout: sensing.RigLayout = None,
    noise: sensing.NoiseParams = sensing.NoiseParams(),
    prune_max: int = 10000,
    closed_loop: bool = False,
) -> SuiteReport:
    """Run every scenario once; rows are ordered by scenario id.

    Deterministic per master seed except the latency fields (wall
    clock). Planner no-solution is recorded, not fatal. The default is
    open-loop (plan once at the start, play the trajectory);
    ``closed_loop`` replans at every control step instead.
    """
    if rig not in sensing.RIGS:
        raise EvaluationError(f"rig must be one of {sensing.RIGS}")
    layout = layout or sensing.default_rig_layout()
    rows = []
    for scenario in sorted(scenarios, key=lambda s: s.scenario_id):
        seed = int(seed_sequence(master_seed, "trial", scenario.scenario_id).generate_state(1)[0])
        if closed_loop:
            executed, latency, info = _closed_loop(
                scenario, rig, spec, seed, model, layout, noise, prune_max
            )
            frames, collided = count_collisions(executed, scenario.world, model)
            rows.append(
                TrialOutcome(
                    scenario_id=scenario.scenario_id,
                    executed=executed,
                    collision_frames=frames,
                    collided=collided,
                    success=judge_success(model, executed, scenario.goal),
                    latency_ms=latency * 1000.0,
                    no_solution=False,
                    fallbacks=info.get("fallbacks", 0),
                )
            )
            continue
        obs, cloud = _observe(scenario, scenario.start, rig, model, layout, noise, seed, prune_max)
        result, info = planning.plan_with_spec(
            spec, cloud, scenario.start, scenario.goal, model, seed,
            obs=obs if rig == "egocentric" else None,
            ground_truth=scenario.world,
        )
        if result.no_solution or result.trajectory is None:
            rows.append(
                TrialOutcome(
                    scenario_id=scenario.scenario_id,
                    executed=None,
                    collision_frames=0,
                    collided=False,
                    success=False,
                    latency_ms=result.wall_time_s * 1000.0,
                    no_solution=True,
                    fallbacks=info.get("fallbacks", 0),
                )
            )
            continue
        frames, collided = count_collisions(result.trajectory, scenario.world, model)
        rows.append(
            TrialOutcome(
                scenario_id=scenario.scenario_id,
                executed=result.trajectory,
                collision_frames=frames,
                collided=collided,
                success=judge_success(model, result.trajectory, scenario.goal),
                latency_ms=result.wall_time_s * 1000.0,
                no_solution=False,
                fallbacks=info.get("fallbacks", 0),
            )
        )
    config = {
        "rig": rig,
        "planner": spec.kind,
        "candidates": spec.candidates,
        "restarts": spec.restarts,
        "noise": [noise.sigma_rel, noise.dropout_p],
        "prune_max": prune_max,
        "seed": int(master_seed),
    }
    return SuiteReport(
        rows=tuple(rows),
        rig=rig,
        planner=spec.kind,
        master_seed=int(master_seed),
        config_fingerprint=fingerprint(config),
    )


# --- comparison ----------------------------------------------------------------

@dataclass(frozen=True)
class Comparison:
    trials: int
    collision_improvement: float  # (base - treat) / base, None when base is 0
    success_improvement: float
    latency_ratio: float  # treatment mean / baseline mean
    base_collided: int
    treat_collided: int
    base_success_rate: float
    treat_success_rate: float

    def table(self) -> str:
        def pct(x):
            return "n/a" if x is None else f"{100.0 * x:+.1f}%"

        lines = [
            f"{'metric':<24}{'baseline':>12}{'treatment':>12}{'improvement':>14}",
            f"{'collided trials':<24}{self.base_collided:>12}{self.treat_collided:>12}{pct(self.collision_improvement):>14}",
            f"{'success rate':<24}{self.base_success_rate:>12.3f}{self.treat_success_rate:>12.3f}{pct(self.success_improvement):>14}",
            f"{'latency ratio (t/b)':<24}{'':>12}{'':>12}{self.latency_ratio:>14.3f}",
            f"{'trials compared':<24}{self.trials:>12}",
        ]
        return "\n".join(lines)


def compare_reports(treatment: SuiteReport, baseline: SuiteReport, restrict_to_baseline_solved: bool = True) -> Comparison:
    """Relative improvements of treatment over baseline on the shared
    scenario set; optionally restricted to trials the baseline solved."""
    treat_rows = {r.scenario_id: r for r in treatment.rows}
    base_rows = {r.scenario_id: r for r in baseline.rows}
    if set(treat_rows) != set(base_rows):
        raise EvaluationError("reports cover different scenario id sets")
    ids = sorted(base_rows)
    if restrict_to_baseline_solved:
        ids = [i for i in ids if not base_rows[i].no_solution]
    if not ids:
        raise EvaluationError("no comparable trials (empty intersection)")

    base_collided = sum(base_rows[i].collided for i in ids)
    treat_collided = sum(treat_rows[i].collided for i in ids)
    base_success = sum(base_rows[i].success for i in ids) / len(ids)
    treat_success = sum(treat_rows[i].success for i in ids) / len(ids)
    base_latency = sum(base_rows[i].latency_ms for i in ids) / len(ids)
    treat_latency = sum(treat_rows[i].latency_ms for i in ids) / len(ids)

    collision_improvement = None if base_collided == 0 else (base_collided - treat_collided) / base_collided
    success_improvement = None if base_success == 0 else (treat_success - base_success) / base_success
    if base_collided == 0 and treat_collided == 0:
        collision_improvement = 0.0
    return Comparison(
        trials=len(ids),
        collision_improvement=collision_improvement,
        success_improvement=success_improvement,
        latency_ratio=treat_latency / base_latency if base_latency > 0 else float("nan"),
        base_collided=base_collided,
        treat_collided=treat_collided,
        base_success_rate=base_success,
        treat_success_rate=treat_success,
    )


# --- report serialization ---------------------------------------------------------

def report_to_node(report: SuiteReport) -> dict:
    return {
        "version": 1,
        "kind": "suite_report",
        "rig": report.rig,
        "planner": report.planner,
        "seed": report.master_seed,
        "config_fingerprint": report.config_fingerprint,
        "aggregates": {
            "collision_rate": float(report.collision_rate),
            "success_rate": float(report.success_rate),
            "no_solution_rate": float(report.no_solution_rate),
            "mean_latency_ms": float(report.mean_latency_ms),
            "median_latency_ms": float(report.median_latency_ms),
        },
        "rows": [
            {
                "scenario_id": r.scenario_id,
                "collision_frames": int(r.collision_frames),
                "collided": bool(r.collided),
                "success": bool(r.success),
                "latency_ms": float(r.latency_ms),
                "no_solution": bool(r.no_solution),
                "fallbacks": int(r.fallbacks),
                "executed": None if r.executed is None else [[float(v) for v in q] for q in r.executed],
            }
            for r in report.rows
        ],
    }


def save_report(report: SuiteReport, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(report_to_node(report), fh, sort_keys=True)


def load_report(path) -> SuiteReport:
    with open(path, "r", encoding="utf-8") as fh:
        node = yaml.safe_load(fh)
    if node.get("kind") != "suite_report":
        raise EvaluationError(f"{path}: not a suite report")
    rows = tuple(
        TrialOutcome(
            scenario_id=r["scenario_id"],
            executed=None if r["executed"] is None else np.asarray(r["executed"], dtype=float),
            collision_frames=int(r["collision_frames"]),
            collided=bool(r["collided"]),
            success=bool(r["success"]),
            latency_ms=float(r["latency_ms"]),
            no_solution=bool(r["no_solution"]),
            fallbacks=int(r.get("fallbacks", 0)),
        )
        for r in node["rows"]
    )
    report = SuiteReport(
        rows=rows,
        rig=node["rig"],
        planner=node["planner"],
        master_seed=int(node["seed"]),
        config_fingerprint=node["config_fingerprint"],
    )
    agg = node.get("aggregates", {})
    if agg and abs(agg["collision_rate"] - report.collision_rate) > 1e-12:
        raise EvaluationError(f"{path}: stored aggregates do not match rows")
    return report


def report_table(report: SuiteReport) -> str:
    return "\n".join(
        [
            f"rig={report.rig} planner={report.planner} seed={report.master_seed} "
            f"fingerprint={report.config_fingerprint}",
            f"trials: {len(report.rows)}",
            f"collision rate: {report.collision_rate:.3f}",
            f"success rate: {report.success_rate:.3f}",
            f"no-solution rate: {report.no_solution_rate:.3f}",
            f"latency ms: mean {report.mean_latency_ms:.1f} / median {report.median_latency_ms:.1f}",
        ]
    )
