"""Single command-line entry point.

Subcommands: gen, render, plan, eval, compare, inspect. All randomness
flows from --seed through per-component derived streams, so any
artifact can be regenerated bit-for-bit from its manifest. Exit codes:
0 success, 2 missing or unreadable input, 3 validation failure,
4 planner or bridge failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
import yaml

from . import __version__, datagen, evaluation, geometry, kinematics, planning, sensing
from .configio import ConfigError, load_rig_layout, load_robot_model, load_scenario, save_scenario
from .formats import write_pointcloud, DepthBatchWriter
from .seeds import fingerprint

EXIT_OK = 0
EXIT_MISSING = 2
EXIT_INVALID = 3
EXIT_PLANNER = 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _require_file(path, what):
    if path is None:
        return None
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}", EXIT_MISSING)
    return path


def _load_run_config(path):
    defaults = {
        "robot_model": None,
        "rig_layout": None,
        "noise": {"sigma_rel": 0.01, "dropout_p": 0.02},
        "datagen": {
            "count_range": [3, 8],
            "clearance": [0.02, 0.10],
            "shape_weights": [0.5, 0.3, 0.2],
            "size_range": [0.05, 0.30],
            "expert_duration_s": 3.0,
        },
        "planner": {
            "epsilon_min": 0.001,
            "horizon": 15,
            "w_collision": 0.002,
            "w_smooth": 1.0,
            "w_goal": 400.0,
            "candidates": 16,
            "restarts": 4,
            "amplitude": 0.3,
            "timeout_s": 2.0,
        },
    }
    if path is not None:
        _require_file(path, "config file")
        with open(path, "r", encoding="utf-8") as fh:
            node = yaml.safe_load(fh) or {}
        if not isinstance(node, dict):
            raise CliError(f"{path}: config must be a mapping", EXIT_INVALID)
        for key, value in node.items():
            if key in ("version", "kind"):
                continue
            if key not in defaults:
                raise CliError(f"{path}: unknown config key {key!r}", EXIT_INVALID)
            if isinstance(defaults[key], dict) and isinstance(value, dict):
                defaults[key].update(value)
            else:
                defaults[key] = value
    return defaults


def _resolve(cfg):
    """Validate every referenced file up front and build the live objects."""
    try:
        model = load_robot_model(_require_file(cfg["robot_model"], "robot model"))
        layout = load_rig_layout(_require_file(cfg["rig_layout"], "rig layout"))
        noise = sensing.NoiseParams(float(cfg["noise"]["sigma_rel"]), float(cfg["noise"]["dropout_p"]))
        p = cfg["planner"]
        cost = planning.CostConfig(
            epsilon_min=float(p["epsilon_min"]),
            horizon=int(p["horizon"]),
            w_collision=float(p["w_collision"]),
            w_smooth=float(p["w_smooth"]),
            w_goal=float(p["w_goal"]),
        )
        d = cfg["datagen"]
        params = datagen.ScenarioParams(
            obstacles=datagen.ObstacleParams(
                count_range=tuple(d["count_range"]),
                clearance_min=float(d["clearance"][0]),
                clearance_max=float(d["clearance"][1]),
                shape_weights=tuple(d["shape_weights"]),
                size_range=tuple(d["size_range"]),
            )
        )
    except (ConfigError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_INVALID) from exc
    return model, layout, noise, cost, params


def _parse_mix(text):
    mix = {}
    try:
        for part in text.split(","):
            tag, weight = part.split(":")
            mix[datagen.TAG_KINDS[tag.strip()]] = float(weight)
    except (KeyError, ValueError) as exc:
        raise CliError(f"bad --mix value {text!r} (expected e.g. ca:0.6,stop:0.2,free:0.2)", EXIT_INVALID) from exc
    return mix


def _write_manifest(out_dir, payload):
    payload = dict(payload)
    payload["tool_version"] = __version__
    payload["fingerprint"] = fingerprint({k: v for k, v in payload.items() if k != "fingerprint"})
    with open(os.path.join(out_dir, "manifest.yaml"), "w", encoding="utf-8") as fh:
        yaml.safe_dump(payload, fh, sort_keys=True)
    return payload["fingerprint"]


def cmd_gen(args):
    cfg = _load_run_config(args.config)
    model, layout, noise, _, params = _resolve(cfg)
    mix = _parse_mix(args.mix)
    scenarios, stats = datagen.generate_scenarios(
        model, args.count, mix, args.seed, params,
        expert_duration_s=float(cfg["datagen"]["expert_duration_s"]),
    )
    scen_dir = os.path.join(args.out, "scenarios")
    os.makedirs(scen_dir, exist_ok=True)
    for scenario in scenarios:
        save_scenario(scenario, os.path.join(scen_dir, f"{scenario.scenario_id}.yaml"))
    if args.dataset:
        n = datagen.write_dataset(scenarios, model, noise, args.seed, os.path.join(args.out, "dataset"), layout)
        print(f"wrote {n} dataset records")
    _write_manifest(
        args.out,
        {
            "command": "gen",
            "count": args.count,
            "mix": args.mix,
            "seed": args.seed,
            "kind_counts": stats.kind_counts,
            "discarded": [list(d) for d in stats.discarded],
        },
    )
    print(f"generated {len(scenarios)} scenarios into {scen_dir} ({len(stats.discarded)} discarded attempts)")
    return EXIT_OK


def cmd_render(args):
    cfg = _load_run_config(args.config)
    model, layout, noise, _, _ = _resolve(cfg)
    if args.noise_sigma is not None or args.dropout is not None:
        noise = sensing.NoiseParams(
            args.noise_sigma if args.noise_sigma is not None else noise.sigma_rel,
            args.dropout if args.dropout is not None else noise.dropout_p,
        )
    scenario = _load_scenario_checked(args.scenario)
    rig = "egocentric" if args.rig == "ego" else "exocentric"
    obs = sensing.render_rig(scenario.world, model, scenario.start, rig, layout, noise, rng_seed=args.seed)
    cloud = sensing.deproject(obs)
    os.makedirs(args.out, exist_ok=True)
    with DepthBatchWriter(os.path.join(args.out, "frames.bin")) as writer:
        for capture in obs.captures:
            writer.add_frame(capture.mount_id, 0, capture.pose, capture.frame.zones)
    write_pointcloud(cloud, os.path.join(args.out, "cloud.bin"))
    _write_manifest(
        args.out,
        {
            "command": "render",
            "scenario": scenario.scenario_id,
            "rig": rig,
            "seed": args.seed,
            "noise": [noise.sigma_rel, noise.dropout_p],
            "points": len(cloud),
        },
    )
    print(f"rendered {len(obs.captures)} frames, {len(cloud)} points -> {args.out}")
    return EXIT_OK


def _load_scenario_checked(path):
    _require_file(path, "scenario file")
    try:
        return load_scenario(path)
    except (ConfigError, datagen.DatagenError, geometry.GeometryError, KeyError) as exc:
        raise CliError(f"invalid scenario {path}: {exc}", EXIT_INVALID) from exc


def _planner_spec(args, cost):
    bridge = None
    if args.planner == "ito-extern":
        if not args.bridge:
            raise CliError("--bridge SOCKET_PATH is required for ito-extern", EXIT_INVALID)
        bridge = ("socket", args.bridge)
    return planning.PlannerSpec(
        kind=args.planner,
        candidates=args.candidates,
        restarts=args.restarts,
        cfg=cost,
        bridge=bridge,
    )


def cmd_plan(args):
    cfg = _load_run_config(args.config)
    model, layout, noise, cost, _ = _resolve(cfg)
    scenario = _load_scenario_checked(args.scenario)
    spec = _planner_spec(args, cost)
    rig = "egocentric" if args.rig == "ego" else "exocentric"
    obs = sensing.render_rig(scenario.world, model, scenario.start, rig, layout, noise, rng_seed=args.seed)
    cloud = sensing.deproject(obs)
    if rig == "exocentric":
        cloud = geometry.prune_pointcloud(cloud, model, scenario.start, 10000, args.seed)
    try:
        result, info = planning.plan_with_spec(
            spec, cloud, scenario.start, scenario.goal, model, args.seed,
            obs=obs if rig == "egocentric" else None,
            ground_truth=scenario.world,
        )
    except planning.PlanningError as exc:
        raise CliError(f"planner failed: {exc}", EXIT_PLANNER) from exc
    node = {
        "scenario": scenario.scenario_id,
        "planner": spec.kind,
        "seed": args.seed,
        "no_solution": bool(result.no_solution),
        "latency_ms": float(result.wall_time_s * 1000.0),
        "cost": {k: float(v) for k, v in result.cost.items()},
        "fallbacks": info.get("fallbacks", 0),
        "selected_index": info.get("selected_index"),
        "trajectory": None if result.trajectory is None else [[float(v) for v in q] for q in result.trajectory],
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            yaml.safe_dump(node, fh, sort_keys=True)
    print(
        f"{scenario.scenario_id}: planner={spec.kind} no_solution={result.no_solution} "
        f"latency={result.wall_time_s * 1000.0:.1f}ms fallbacks={info.get('fallbacks', 0)}"
    )
    if spec.kind == "ito-extern" and info.get("fallbacks", 0) and args.strict_bridge:
        raise CliError("bridge fell back to the internal generator", EXIT_PLANNER)
    return EXIT_OK


def cmd_eval(args):
    cfg = _load_run_config(args.config)
    model, layout, noise, cost, _ = _resolve(cfg)
    suite_dir = args.suite
    scen_dir = os.path.join(suite_dir, "scenarios")
    if not os.path.isdir(scen_dir):
        scen_dir = suite_dir
    if not os.path.isdir(scen_dir):
        raise CliError(f"suite directory not found: {args.suite}", EXIT_MISSING)
    files = sorted(f for f in os.listdir(scen_dir) if f.endswith(".yaml") and f != "manifest.yaml")
    if not files:
        raise CliError(f"no scenario files under {scen_dir}", EXIT_MISSING)
    scenarios = [_load_scenario_checked(os.path.join(scen_dir, f)) for f in files]
    for scenario in scenarios:
        report = datagen.verify_scenario(scenario, model)
        if not report.ok:
            first = report.failures()[0]
            raise CliError(f"scenario {scenario.scenario_id} failed validation: {first.name} {first.detail}", EXIT_INVALID)
    rig = "egocentric" if args.rig == "ego" else "exocentric"
    spec = _planner_spec(args, cost)
    report = evaluation.run_suite(scenarios, rig, spec, args.seed, model, layout, noise)
    if args.out:
        evaluation.save_report(report, args.out)
    print(evaluation.report_table(report))
    return EXIT_OK


def cmd_compare(args):
    _require_file(args.treatment, "treatment report")
    _require_file(args.baseline, "baseline report")
    try:
        treatment = evaluation.load_report(args.treatment)
        baseline = evaluation.load_report(args.baseline)
        comparison = evaluation.compare_reports(treatment, baseline, restrict_to_baseline_solved=not args.all_trials)
    except evaluation.EvaluationError as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    print(comparison.table())
    return EXIT_OK


def cmd_inspect(args):
    cfg = _load_run_config(args.config)
    model, _, _, _, params = _resolve(cfg)
    scenario = _load_scenario_checked(args.scenario)
    wp = scenario.expert.waypoints
    path_length = float(np.sum(np.abs(np.diff(wp, axis=0)))) if len(wp) > 1 else 0.0
    if scenario.world.obstacles:
        dense = datagen.oversample_trajectory(wp, 10)
        centers = kinematics.collision_spheres_traj(model, dense).reshape(-1, 3)
        radii = np.tile(kinematics.sphere_radii(model), dense.shape[0])
        min_clearance = float(np.min(geometry.sdf_batch(scenario.world, centers) - radii))
        clearance_text = f"{min_clearance:.4f} m"
    else:
        clearance_text = "n/a (no obstacles)"
    verify = datagen.verify_scenario(scenario, model, params)
    print(f"id:            {scenario.scenario_id}")
    print(f"kind:          {scenario.kind.value}")
    print(f"seed:          {scenario.seed}")
    print(f"obstacles:     {len(scenario.world.obstacles)}")
    print(f"waypoints:     {len(wp)} at {scenario.expert.rate_hz:g} Hz ({scenario.expert.source})")
    print(f"path length:   {path_length:.3f} rad (joint-space L1)")
    print(f"min clearance: {clearance_text}")
    print(f"valid:         {verify.ok}" + ("" if verify.ok else f" ({verify.failures()[0].name})"))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="egoplan", description=__doc__)
    parser.add_argument("--version", action="version", version=f"egoplan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a scenario suite (and optionally a training dataset)")
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--mix", default="ca:0.6,stop:0.2,free:0.2")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--dataset", action="store_true", help="also render and write dataset records")
    gen.add_argument("--config")
    gen.set_defaults(func=cmd_gen)

    render = sub.add_parser("render", help="render one scenario's rig observation")
    render.add_argument("--scenario", required=True)
    render.add_argument("--rig", choices=("ego", "exo"), default="ego")
    render.add_argument("--seed", type=int, default=0)
    render.add_argument("--noise-sigma", type=float, default=None)
    render.add_argument("--dropout", type=float, default=None)
    render.add_argument("--out", required=True)
    render.add_argument("--config")
    render.set_defaults(func=cmd_render)

    plan = sub.add_parser("plan", help="plan one scenario")
    plan.add_argument("--scenario", required=True)
    plan.add_argument("--planner", choices=("baseline", "ito-perturb", "ito-extern"), default="ito-perturb")
    plan.add_argument("--candidates", type=int, default=16)
    plan.add_argument("--restarts", type=int, default=4)
    plan.add_argument("--rig", choices=("ego", "exo"), default="ego")
    plan.add_argument("--seed", type=int, default=0)
    plan.add_argument("--bridge", help="unix socket path of an external candidate server")
    plan.add_argument("--strict-bridge", action="store_true", help="exit nonzero if the bridge fell back")
    plan.add_argument("--out")
    plan.add_argument("--config")
    plan.set_defaults(func=cmd_plan)

    ev = sub.add_parser("eval", help="run a scenario suite and write a report")
    ev.add_argument("--suite", required=True)
    ev.add_argument("--rig", choices=("ego", "exo"), default="ego")
    ev.add_argument("--planner", choices=("baseline", "ito-perturb", "ito-extern"), default="ito-perturb")
    ev.add_argument("--candidates", type=int, default=16)
    ev.add_argument("--restarts", type=int, default=4)
    ev.add_argument("--bridge")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out")
    ev.add_argument("--config")
    ev.set_defaults(func=cmd_eval)

    cmp_parser = sub.add_parser("compare", help="relative improvement of one report over another")
    cmp_parser.add_argument("--treatment", required=True)
    cmp_parser.add_argument("--baseline", required=True)
    cmp_parser.add_argument("--all-trials", action="store_true", help="do not restrict to baseline-solved trials")
    cmp_parser.set_defaults(func=cmd_compare)

    inspect = sub.add_parser("inspect", help="summarize one scenario file")
    inspect.add_argument("--scenario", required=True)
    inspect.add_argument("--config")
    inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, datagen.DatagenError, geometry.GeometryError, evaluation.EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except planning.PlanningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PLANNER
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
