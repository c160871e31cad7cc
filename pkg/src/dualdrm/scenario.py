"""Scenario and trajectory JSON files, and the shelf-world scenario generator."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .kinematics import RobotModel, collision_conditions_batch, robot_from_dict, robot_to_dict
from .persistence import CompatMeta
from .voxel_world import OccupancySet, VoxelGrid, occupancy_from_points

SCENARIO_VERSION = 1
TRAJECTORY_VERSION = 1


@dataclass
class Scenario:
    scenario_id: str
    grid: VoxelGrid
    occupancy: OccupancySet
    start: np.ndarray
    target: np.ndarray
    padding: float | None = None
    metric_weights: list | None = None
    generator: dict = field(default_factory=dict)

    def compat(self) -> CompatMeta:
        w = None if self.metric_weights is None else tuple(float(x) for x in self.metric_weights)
        return CompatMeta(self.grid.spec(), self.padding, w)

    def configs(self, model: RobotModel):
        return model.full_config(self.start), model.full_config(self.target)

    def to_dict(self) -> dict:
        return {
            "format_version": SCENARIO_VERSION,
            "kind": "scenario",
            "id": self.scenario_id,
            "grid": self.grid.spec(),
            "occupied": [int(i) for i in self.occupancy.ids],
            "start": [float(x) for x in self.start],
            "target": [float(x) for x in self.target],
            "padding": self.padding,
            "metric_weights": self.metric_weights,
            "generator": self.generator,
        }


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})") from exc


def _check_version(d, kind, version, path):
    if not isinstance(d, dict) or d.get("kind") != kind:
        raise FormatError(f"{path}: not a {kind} file")
    if d.get("format_version") != version:
        raise FormatError(f"{path}: {kind} format_version {d.get('format_version')}, "
                          f"reader supports {version}")


def scenario_from_dict(d: dict, where="scenario") -> Scenario:
    _check_version(d, "scenario", SCENARIO_VERSION, where)
    try:
        grid = VoxelGrid.from_spec(d["grid"])
        occ = OccupancySet.from_ids(grid, d.get("occupied", []))
        if d.get("points"):
            occ = occ.union(occupancy_from_points(grid, d["points"]))
        start = np.asarray(d["start"], float)
        target = np.asarray(d["target"], float)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{where}: malformed scenario ({exc})") from exc
    if start.ndim != 1 or start.shape != target.shape:
        raise FormatError(f"{where}: start and target must be equal-length vectors")
    return Scenario(str(d.get("id", "")), grid, occ, start, target, d.get("padding"),
                    d.get("metric_weights"), d.get("generator", {}))


def load_scenario(path) -> Scenario:
    return scenario_from_dict(_load_json(path), str(path))


def save_scenario(sc: Scenario, path):
    Path(path).write_text(json.dumps(sc.to_dict(), indent=1) + "\n")


# -- trajectories -----------------------------------------------------------------------


def trajectory_to_dict(traj, model: RobotModel, grid: VoxelGrid, scenario_id="") -> dict:
    return {
        "format_version": TRAJECTORY_VERSION,
        "kind": "trajectory",
        "scenario_id": scenario_id,
        "planner": traj.planner,
        "robot": robot_to_dict(model),
        "grid": grid.spec(),
        "waypoints": [w.to_list() for w in traj.waypoints],
        "cost": traj.cost,
        "iterations": traj.iterations,
        "stats": traj.stats.as_dict(),
        "timings": traj.timings,
    }


def save_trajectory(traj, model, grid, path, scenario_id=""):
    Path(path).write_text(json.dumps(trajectory_to_dict(traj, model, grid, scenario_id), indent=1) + "\n")


@dataclass
class TrajectoryFile:
    waypoints: np.ndarray
    robot: RobotModel | None
    grid: VoxelGrid | None
    meta: dict


def load_trajectory(path) -> TrajectoryFile:
    d = _load_json(path)
    _check_version(d, "trajectory", TRAJECTORY_VERSION, path)
    wps = d.get("waypoints")
    if not isinstance(wps, list) or len(wps) == 0:
        raise FormatError(f"{path}: trajectory has no waypoints")
    try:
        arr = np.asarray(wps, float)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: waypoints are not numeric vectors") from exc
    if arr.ndim != 2:
        raise FormatError(f"{path}: waypoints must all have the same length")
    robot = robot_from_dict(d["robot"]) if d.get("robot") else None
    grid = VoxelGrid.from_spec(d["grid"]) if d.get("grid") else None
    return TrajectoryFile(arr, robot, grid, d)


# -- shelf-world generator ----------------------------------------------------------------


@dataclass(frozen=True)
class ShelfParams:
    """Wall of voxels facing the robot with rectangular openings.

    Distances in metres.  The wall is a slab normal to +x whose near face
    lies in ``wall_x``; it spans ``wall_y`` x ``wall_z`` and is
    ``thickness_voxels`` thick.  Openings are cut on an ``rows`` x ``cols``
    lattice with random sizes.  Start and target configurations are sampled
    uniformly within joint limits and kept only if collision-free with
    ``clearance`` extra padding.
    """

    wall_x: tuple = (0.40, 0.55)
    wall_y: tuple = (-0.75, 0.75)
    wall_z: tuple = (0.15, 1.35)
    thickness_voxels: int = 1
    rows: tuple = (1, 3)
    cols: tuple = (2, 4)
    opening_width: tuple = (0.18, 0.36)
    opening_height: tuple = (0.15, 0.30)
    clearance: float | None = None  # default: one voxel
    max_tries: int = 20000

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def shelf_occupancy(grid: VoxelGrid, rng: np.random.Generator, params: ShelfParams):
    x0 = rng.uniform(*params.wall_x)
    rows = int(rng.integers(params.rows[0], params.rows[1] + 1))
    cols = int(rng.integers(params.cols[0], params.cols[1] + 1))
    ids = np.arange(grid.count)
    c = grid.centers(ids)
    thick = params.thickness_voxels * grid.voxel_size
    wall = ((c[:, 0] >= x0) & (c[:, 0] < x0 + thick)
            & (c[:, 1] >= params.wall_y[0]) & (c[:, 1] <= params.wall_y[1])
            & (c[:, 2] >= params.wall_z[0]) & (c[:, 2] <= params.wall_z[1]))
    ys = np.linspace(*params.wall_y, cols + 1)
    zs = np.linspace(*params.wall_z, rows + 1)
    openings = []
    for i in range(rows):
        for j in range(cols):
            w = min(rng.uniform(*params.opening_width), ys[j + 1] - ys[j])
            h = min(rng.uniform(*params.opening_height), zs[i + 1] - zs[i])
            yc = rng.uniform(ys[j] + w / 2, ys[j + 1] - w / 2)
            zc = rng.uniform(zs[i] + h / 2, zs[i + 1] - h / 2)
            openings.append([yc - w / 2, yc + w / 2, zc - h / 2, zc + h / 2])
            wall &= ~((np.abs(c[:, 1] - yc) < w / 2) & (np.abs(c[:, 2] - zc) < h / 2))
    occ = OccupancySet.from_ids(grid, ids[wall])
    return occ, {"wall_x": x0, "rows": rows, "cols": cols, "openings": openings}


def sample_free_config(model: RobotModel, grid: VoxelGrid, occ: OccupancySet,
                       rng: np.random.Generator, clearance: float, max_tries: int,
                       batch: int = 256) -> np.ndarray:
    lim = model.full_limits
    tried = 0
    while tried < max_tries:
        q = rng.uniform(lim[:, 0], lim[:, 1], size=(batch, len(lim)))
        hit = collision_conditions_batch(model, q, grid, occ, clearance).any(axis=1)
        free = np.flatnonzero(~hit)
        if len(free):
            return q[free[0]]
        tried += batch
    raise InputError("could not sample a collision-free configuration")


def generate_shelf_scenario(model: RobotModel, grid: VoxelGrid, seed: int, index: int = 0,
                            params: ShelfParams = ShelfParams()) -> Scenario:
    """Deterministic in ``(seed, index)``."""
    rng = np.random.default_rng([seed, index])
    occ, layout = shelf_occupancy(grid, rng, params)
    clearance = grid.voxel_size if params.clearance is None else params.clearance
    start = sample_free_config(model, grid, occ, rng, clearance, params.max_tries)
    target = sample_free_config(model, grid, occ, rng, clearance, params.max_tries)
    gen = {"name": "shelf", "seed": seed, "index": index, "params": params.to_dict(),
           "layout": layout}
    return Scenario(f"shelf-{seed}-{index:04d}", grid, occ, start, target, generator=gen)
