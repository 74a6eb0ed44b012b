"""Structured-text (YAML) schemas: robot models, rig layouts, worlds,
and scenarios.

All files are versioned key-trees. Numbers are meters and radians,
except sensor fields explicitly suffixed ``_deg``. Loading validates
eagerly so a bad file fails before any work starts.
"""

from __future__ import annotations

import math
from importlib import resources

import numpy as np
import yaml

from . import geometry, sensing
from .kinematics import ArmLink, ArmModel, MountSpec, RobotModel, SphereSpec
from .transforms import Pose

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _require(node: dict, key: str, context: str):
    if key not in node:
        raise ConfigError(f"{context}: missing required key {key!r}")
    return node[key]


def _floats(values) -> list:
    return [float(v) for v in np.asarray(values, dtype=float).reshape(-1)]


def pose_from_node(node: dict, context: str = "pose") -> Pose:
    xyz = _require(node, "xyz", context)
    quat = node.get("quat", [1.0, 0.0, 0.0, 0.0])
    try:
        return Pose(np.asarray(quat, dtype=float), np.asarray(xyz, dtype=float))
    except ValueError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


def pose_to_node(pose: Pose) -> dict:
    return {"xyz": _floats(pose.translation), "quat": _floats(pose.rotation)}


def _check_version(node: dict, kind: str, path):
    if node.get("version") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: expected version {SCHEMA_VERSION}, got {node.get('version')!r}")
    if node.get("kind") != kind:
        raise ConfigError(f"{path}: expected kind {kind!r}, got {node.get('kind')!r}")


def _load_yaml(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        node = yaml.safe_load(fh)
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return node


def _dump_yaml(node: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(node, fh, sort_keys=True, default_flow_style=None)


def _packaged(name: str):
    return resources.files("egoplan").joinpath("data", name)


# --- robot model ------------------------------------------------------------

def _arm_from_node(node: dict, context: str) -> ArmModel:
    links = []
    for i, link_node in enumerate(_require(node, "links", context)):
        lo, hi = _require(link_node, "limits", f"{context}.links[{i}]")
        links.append(
            ArmLink(
                axis=np.asarray(_require(link_node, "axis", f"{context}.links[{i}]"), dtype=float),
                offset=pose_from_node(_require(link_node, "offset", f"{context}.links[{i}]")),
                lower=float(lo),
                upper=float(hi),
            )
        )
    spheres = tuple(
        SphereSpec(link=int(s["link"]), center=np.asarray(s["center"], dtype=float), radius=float(s["radius"]))
        for s in node.get("spheres", [])
    )
    mounts = tuple(
        MountSpec(link=int(m["link"]), pose=pose_from_node(m["pose"])) for m in node.get("mounts", [])
    )
    return ArmModel(
        links=tuple(links),
        base_pose=pose_from_node(_require(node, "base", context)),
        ee_offset=pose_from_node(_require(node, "ee_offset", context)),
        spheres=spheres,
        mounts=mounts,
    )


def load_robot_model(path=None) -> RobotModel:
    """Load a robot model file; with no path, the in-tree default model."""
    src = path if path is not None else _packaged("robot_gr1_like.yaml")
    node = _load_yaml(src)
    _check_version(node, "robot_model", src)
    arms = _require(node, "arms", "robot_model")
    torso_spheres = tuple(
        (np.asarray(s["center"], dtype=float), float(s["radius"])) for s in node.get("torso_spheres", [])
    )
    for _, radius in torso_spheres:
        if radius <= 0:
            raise ConfigError("torso sphere radii must be positive")
    return RobotModel(
        left=_arm_from_node(_require(arms, "left", "arms"), "arms.left"),
        right=_arm_from_node(_require(arms, "right", "arms"), "arms.right"),
        torso_frame=pose_from_node(_require(node, "torso_frame", "robot_model")),
        head_frame=pose_from_node(_require(node, "head_frame", "robot_model")),
        torso_spheres=torso_spheres,
        nominal=bool(node.get("nominal", True)),
    )


# --- worlds -----------------------------------------------------------------

def obstacle_to_node(obs) -> dict:
    if isinstance(obs, geometry.Sphere):
        return {"type": "sphere", "center": _floats(obs.center), "radius": float(obs.radius)}
    if isinstance(obs, geometry.Box):
        return {
            "type": "box",
            "center": _floats(obs.center),
            "half_extents": _floats(obs.half_extents),
            "quat": _floats(obs.rotation),
        }
    if isinstance(obs, geometry.Capsule):
        return {"type": "capsule", "a": _floats(obs.a), "b": _floats(obs.b), "radius": float(obs.radius)}
    raise ConfigError(f"unsupported obstacle type {type(obs).__name__}")


def obstacle_from_node(node: dict, context: str = "obstacle"):
    kind = _require(node, "type", context)
    try:
        if kind == "sphere":
            return geometry.Sphere(np.asarray(node["center"], dtype=float), float(node["radius"]))
        if kind == "box":
            return geometry.Box(
                np.asarray(node["center"], dtype=float),
                np.asarray(node["half_extents"], dtype=float),
                np.asarray(node.get("quat", [1.0, 0.0, 0.0, 0.0]), dtype=float),
            )
        if kind == "capsule":
            return geometry.Capsule(
                np.asarray(node["a"], dtype=float), np.asarray(node["b"], dtype=float), float(node["radius"])
            )
    except (KeyError, geometry.GeometryError) as exc:
        raise ConfigError(f"{context}: {exc}") from exc
    raise ConfigError(f"{context}: unknown obstacle type {kind!r}")


def world_to_node(world: geometry.World) -> dict:
    lo, hi = world.bounds
    return {
        "bounds": {"min": _floats(lo), "max": _floats(hi)},
        "obstacles": [obstacle_to_node(o) for o in world.obstacles],
    }


def world_from_node(node: dict) -> geometry.World:
    obstacles = tuple(obstacle_from_node(o, f"obstacles[{i}]") for i, o in enumerate(node.get("obstacles", [])))
    bounds_node = _require(node, "bounds", "world")
    bounds = (np.asarray(bounds_node["min"], dtype=float), np.asarray(bounds_node["max"], dtype=float))
    return geometry.World(obstacles, bounds)


def save_world(world: geometry.World, path):
    node = {"version": SCHEMA_VERSION, "kind": "world"}
    node.update(world_to_node(world))
    _dump_yaml(node, path)


def load_world(path) -> geometry.World:
    node = _load_yaml(path)
    _check_version(node, "world", path)
    return world_from_node(node)


# --- rig layouts ------------------------------------------------------------

def rig_layout_to_node(layout: sensing.RigLayout) -> dict:
    def mount_node(m):
        return {"id": m.mount_id, "frame": m.frame, "link": m.link, "pose": pose_to_node(m.pose)}

    return {
        "version": SCHEMA_VERSION,
        "kind": "rig_layout",
        "tof_spec": {
            "zones_x": layout.tof.zones_x,
            "zones_y": layout.tof.zones_y,
            "diagonal_fov_deg": math.degrees(layout.tof.diagonal_fov),
            "max_range": layout.tof.max_range,
            "rate_hz": layout.tof.rate_hz,
            "supersample": layout.tof.supersample,
        },
        "camera_spec": {
            "width": layout.camera.width,
            "height": layout.camera.height,
            "fov_h_deg": math.degrees(layout.camera.fov_h),
            "fov_v_deg": math.degrees(layout.camera.fov_v),
            "max_range": layout.camera.max_range,
            "supersample": layout.camera.supersample,
        },
        "ego_mounts": [mount_node(m) for m in layout.ego_mounts],
        "exo_mounts": [mount_node(m) for m in layout.exo_mounts],
    }


def load_rig_layout(path=None) -> sensing.RigLayout:
    src = path if path is not None else _packaged("rig_default.yaml")
    node = _load_yaml(src)
    _check_version(node, "rig_layout", src)
    tof_node = _require(node, "tof_spec", "rig_layout")
    cam_node = _require(node, "camera_spec", "rig_layout")
    tof = sensing.TofSensorSpec(
        zones_x=int(tof_node["zones_x"]),
        zones_y=int(tof_node["zones_y"]),
        diagonal_fov=math.radians(float(tof_node["diagonal_fov_deg"])),
        max_range=float(tof_node["max_range"]),
        rate_hz=float(tof_node["rate_hz"]),
        supersample=bool(tof_node.get("supersample", False)),
    )
    camera = sensing.CameraSpec(
        width=int(cam_node["width"]),
        height=int(cam_node["height"]),
        fov_h=math.radians(float(cam_node["fov_h_deg"])),
        fov_v=math.radians(float(cam_node["fov_v_deg"])),
        max_range=float(cam_node["max_range"]),
        supersample=bool(cam_node.get("supersample", False)),
    )

    def mounts(key):
        out = []
        for i, m in enumerate(node.get(key, [])):
            out.append(
                sensing.SensorMount(
                    mount_id=int(_require(m, "id", f"{key}[{i}]")),
                    frame=str(_require(m, "frame", f"{key}[{i}]")),
                    link=int(m.get("link", -1)),
                    pose=pose_from_node(_require(m, "pose", f"{key}[{i}]")),
                )
            )
        return tuple(out)

    return sensing.RigLayout(tof, camera, mounts("ego_mounts"), mounts("exo_mounts"))


def save_rig_layout(layout: sensing.RigLayout, path):
    _dump_yaml(rig_layout_to_node(layout), path)


# --- scenarios ---------------------------------------------------------------

def scenario_to_node(scenario) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "kind": "scenario",
        "id": scenario.scenario_id,
        "scenario_kind": scenario.kind.value,
        "seed": int(scenario.seed),
        "start": _floats(scenario.start),
        "goal": _floats(scenario.goal),
        "world": world_to_node(scenario.world),
        "expert": {
            "source": scenario.expert.source,
            "rate_hz": float(scenario.expert.rate_hz),
            "waypoints": [_floats(w) for w in scenario.expert.waypoints],
        },
    }


def scenario_from_node(node: dict, path="scenario"):
    from . import datagen

    _check_version(node, "scenario", path)
    expert_node = _require(node, "expert", "scenario")
    expert = datagen.ExpertTrajectory(
        waypoints=np.asarray(expert_node["waypoints"], dtype=float),
        source=str(expert_node.get("source", "synthetic")),
        rate_hz=float(expert_node.get("rate_hz", 15.0)),
    )
    return datagen.Scenario(
        kind=datagen.ScenarioKind(node["scenario_kind"]),
        start=np.asarray(node["start"], dtype=float),
        goal=np.asarray(node["goal"], dtype=float),
        world=world_from_node(_require(node, "world", "scenario")),
        expert=expert,
        seed=int(node["seed"]),
        scenario_id=str(node["id"]),
    )


def save_scenario(scenario, path):
    _dump_yaml(scenario_to_node(scenario), path)


def load_scenario(path):
    return scenario_from_node(_load_yaml(path), path)
