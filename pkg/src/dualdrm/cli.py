"""``dualdrm`` command line: build, plan, check, bench, gen.

Errors go to stderr as one JSON object per line
(``{"error": kind, "message": ..., "exit_code": n}``).
"""
from __future__ import annotations

import argparse
import ast
import json
import math
import operator
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import errors as E
from .baselines import leader_follower_plan, product_oracle_plan
from .dual_roadmap import build_dual, load_dual, save_dual
from .kinematics import load_robot
from .persistence import hash_compatibility
from .planner import DEFAULT_RESOLUTION, PlanOptions, PlanRequest, plan, validate_trajectory
from .report import BenchRow, write_report
from .robots import desk_defaults, desk_robot, planar_demo_robot
from .scenario import (ShelfParams, generate_shelf_scenario, load_scenario, load_trajectory,
                       save_scenario, save_trajectory)
from .voxel_world import VoxelGrid

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2
EXIT_NODE_CAP = 3
EXIT_NO_PATH = 4
EXIT_BUDGET = 5
EXIT_IO = 6
EXIT_COMPAT = 7
EXIT_ENDPOINT = 8

PLANNERS = ("dual", "leader-follower", "product-oracle")
BUILTIN_ROBOTS = {"desk": desk_robot, "planar-demo": planar_demo_robot}


class CliError(Exception):
    def __init__(self, kind, message, code):
        super().__init__(message)
        self.kind = kind
        self.code = code


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, E.NodeCapExceeded):
        return EXIT_NODE_CAP
    if isinstance(exc, (E.StartInCollision, E.TargetInCollision, E.NoConnectableNode)):
        return EXIT_ENDPOINT
    if isinstance(exc, E.NoPath):
        return EXIT_NO_PATH
    if isinstance(exc, (E.BudgetExceeded, E.LimitExceeded, E.PairBudgetExceeded)):
        return EXIT_BUDGET
    if isinstance(exc, (E.GridMismatchError, E.ConfigurationError)):
        return EXIT_COMPAT
    if isinstance(exc, (E.FormatError, OSError)):
        return EXIT_IO
    if isinstance(exc, E.InputError):
        return EXIT_USAGE
    return EXIT_IO


def failure_kind(exc: BaseException) -> str:
    return getattr(exc, "kind", None) or type(exc).__name__


# -- argument parsing ---------------------------------------------------------------------

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.USub: operator.neg, ast.UAdd: operator.pos}


def parse_number(text: str) -> float:
    """Float literal or arithmetic over numbers and ``pi`` (e.g. ``pi/6``, ``-2*pi/3``)."""
    def ev(node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ValueError
    try:
        return ev(ast.parse(text.strip(), mode="eval").body)
    except (SyntaxError, ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def positive_number(text: str) -> float:
    v = parse_number(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text!r}")
    return v


def nonneg_number(text: str) -> float:
    v = parse_number(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text!r}")
    return v


def joint_range(text: str):
    name, sep, rng = text.partition("=")
    lo, sep2, hi = rng.partition(":")
    if not sep or not sep2 or not name:
        raise argparse.ArgumentTypeError(f"expected NAME=LO:HI, got {text!r}")
    return name.strip(), parse_number(lo), parse_number(hi)


def _add_grid_flags(p, defaults):
    p.add_argument("--voxel-size", type=positive_number, default=defaults["voxel_size"])
    p.add_argument("--workspace", type=parse_number, nargs=6,
                   metavar=("XMIN", "YMIN", "ZMIN", "XMAX", "YMAX", "ZMAX"),
                   default=[*defaults["workspace"][0], *defaults["workspace"][1]])


def _add_plan_flags(p):
    p.add_argument("--planner", choices=PLANNERS, default="dual")
    p.add_argument("--resolution", type=positive_number, default=DEFAULT_RESOLUTION,
                   help="max joint change between dense collision samples [rad]")
    p.add_argument("--time-budget", type=positive_number, default=10.0, help="seconds per query")
    p.add_argument("--retries", type=int, default=2,
                   help="restricted-search failures before switching to exhaustive search")
    p.add_argument("--iterations", type=int, default=500, help="repair iteration cap")
    p.add_argument("--no-shortcut", action="store_true")
    p.add_argument("--pair-budget", type=int, default=200_000,
                   help="largest product graph the product-oracle planner will build")


def build_parser() -> argparse.ArgumentParser:
    d = desk_defaults()
    ap = argparse.ArgumentParser(prog="dualdrm", description="Dual-arm dynamic roadmap planner")
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build a dual roadmap file")
    b.add_argument("--robot", required=True,
                   help="robot JSON file, or builtin:desk / builtin:planar-demo")
    b.add_argument("--torso-step", type=positive_number, default=d["torso_step"])
    b.add_argument("--arm-step", type=positive_number, default=d["arm_step"])
    b.add_argument("--joint-ranges", type=joint_range, action="append", default=[],
                   metavar="NAME=LO:HI", help="discretize joint NAME over [LO, HI] only")
    _add_grid_flags(b, d)
    b.add_argument("--padding", type=nonneg_number, default=None,
                   help="collision padding [m] baked into the maps (default: half a voxel)")
    b.add_argument("--node-cap", type=int, default=2_000_000)
    b.add_argument("-o", "--out", required=True)

    p = sub.add_parser("plan", help="plan one scenario")
    p.add_argument("roadmap")
    p.add_argument("scenario")
    _add_plan_flags(p)
    p.add_argument("-o", "--out", required=True, help="trajectory JSON output")

    c = sub.add_parser("check", help="re-verify a trajectory against a scenario")
    c.add_argument("trajectory")
    c.add_argument("scenario")
    c.add_argument("--resolution", type=positive_number, default=DEFAULT_RESOLUTION)
    c.add_argument("--robot", help="robot file (default: the robot embedded in the trajectory)")

    be = sub.add_parser("bench", help="run planners over a scenario directory")
    be.add_argument("roadmap")
    be.add_argument("scenario_dir")
    be.add_argument("--planners", default="dual,leader-follower",
                    help="comma-separated subset of " + ",".join(PLANNERS))
    _add_plan_flags(be)
    be.add_argument("--seed", type=int, default=0,
                    help="accepted for symmetry with gen; bench itself draws no random numbers")
    be.add_argument("--limit", type=int, default=None, help="use only the first N scenarios")
    be.add_argument("--omit-timing", action="store_true",
                    help="leave wall-clock columns empty (byte-identical reruns)")
    be.add_argument("--no-figure", action="store_true")
    be.add_argument("-o", "--out", required=True, help="report CSV path")

    g = sub.add_parser("gen", help="generate shelf-world scenarios")
    g.add_argument("--robot", required=True)
    _add_grid_flags(g, d)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=10)
    g.add_argument("-o", "--out", required=True, help="output directory")
    return ap


# -- helpers --------------------------------------------------------------------------------


def _load_robot(spec: str):
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if name not in BUILTIN_ROBOTS:
            raise CliError("UsageError", f"unknown builtin robot {name!r}", EXIT_USAGE)
        return BUILTIN_ROBOTS[name]()
    return load_robot(spec)


def _grid(args) -> VoxelGrid:
    w = args.workspace
    try:
        return VoxelGrid.from_workspace(w[:3], w[3:], args.voxel_size)
    except (E.InputError, ValueError) as exc:
        raise CliError("UsageError", str(exc), EXIT_USAGE) from None


def _threads(default: int) -> int:
    raw = os.environ.get("DUALDRM_THREADS")
    if raw is None:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise CliError("UsageError", f"DUALDRM_THREADS must be an integer, got {raw!r}",
                       EXIT_USAGE) from None


def _ranges_for(model, pairs):
    """Split NAME=LO:HI overrides into (torso, arm1, arm2) range lists (None = limits)."""
    groups = [list(model.torso), list(model.arm1), list(model.arm2)]
    out = [[tuple(j.limits) for j in g] for g in groups]
    touched = [False] * 3
    for name, lo, hi in pairs:
        for gi, g in enumerate(groups):
            idx = [k for k, j in enumerate(g) if j.name == name]
            if idx:
                out[gi][idx[0]] = (lo, hi)
                touched[gi] = True
                break
        else:
            raise CliError("UsageError", f"no joint named {name!r}", EXIT_USAGE)
    return [o if t else None for o, t in zip(out, touched)]


def _options(args) -> PlanOptions:
    if args.retries < 0 or args.iterations < 1:
        raise CliError("UsageError", "--retries must be >= 0 and --iterations >= 1", EXIT_USAGE)
    return PlanOptions(resolution=args.resolution, max_iterations=args.iterations,
                       time_budget=args.time_budget, shortcut=not args.no_shortcut,
                       restricted_retries=args.retries)


def _run_planner(name, dual, model, request, pair_budget):
    if name == "dual":
        return plan(dual, model, request)
    if name == "leader-follower":
        return leader_follower_plan(dual, model, request)
    return product_oracle_plan(dual, model, request, pair_budget)


def _check_compat(dual, scenario):
    comp = hash_compatibility(dual.compat, scenario.compat())
    if not comp:
        raise CliError("CompatibilityMismatch", comp.detail(), EXIT_COMPAT)


# -- commands -----------------------------------------------------------------------------------


def cmd_build(args) -> int:
    model = _load_robot(args.robot)
    grid = _grid(args)
    torso_r, arm1_r, arm2_r = _ranges_for(model, args.joint_ranges)
    t0 = time.perf_counter()
    dual = build_dual(model, args.torso_step, args.arm_step, args.arm_step, grid, args.padding,
                      torso_ranges=torso_r, arm1_ranges=arm1_r, arm2_ranges=arm2_r,
                      node_cap=args.node_cap)
    elapsed = time.perf_counter() - t0
    save_dual(dual, args.out)
    print(f"nodes_arm1={dual.r1.node_count}")
    print(f"nodes_arm2={dual.r2.node_count}")
    print(f"edges_arm1={dual.r1.edge_count}")
    print(f"edges_arm2={dual.r2.edge_count}")
    print(f"torso_values={len(dual.torso_table)}")
    print(f"inter_pairs={dual.inter_pair_count}")
    print(f"build_time_s={elapsed:.3f}")
    return EXIT_OK


def cmd_plan(args) -> int:
    dual = load_dual(args.roadmap)
    scenario = load_scenario(args.scenario)
    _check_compat(dual, scenario)
    model = dual.model
    start, target = scenario.configs(model)
    request = PlanRequest(start, target, scenario.occupancy, _options(args))
    traj = _run_planner(args.planner, dual, model, request, args.pair_budget)
    save_trajectory(traj, model, dual.grid, args.out, scenario.scenario_id)
    s = traj.stats
    print(f"planner={traj.planner} waypoints={len(traj.waypoints)} cost={traj.cost:.6f} "
          f"pairs_expanded={s.pairs_expanded} fallback_used={int(s.fallback_used)} "
          f"time_s={sum(traj.timings.values()):.4f}")
    return EXIT_OK


def cmd_check(args) -> int:
    traj = load_trajectory(args.trajectory)
    scenario = load_scenario(args.scenario)
    model = _load_robot(args.robot) if args.robot else traj.robot
    if model is None:
        raise CliError("FormatError", "trajectory embeds no robot; pass --robot", EXIT_IO)
    if traj.waypoints.shape[1] != model.dof:
        raise CliError("FormatError", f"waypoints have {traj.waypoints.shape[1]} values, robot "
                       f"has {model.dof} joints", EXIT_IO)
    if traj.grid is not None and traj.grid != scenario.grid:
        raise CliError("CompatibilityMismatch", "trajectory grid differs from scenario grid",
                       EXIT_COMPAT)
    try:
        v = validate_trajectory(model, list(traj.waypoints), scenario.occupancy, args.resolution)
    except E.JointLimitError as exc:
        print(f"violation: joint limits ({exc})")
        return EXIT_VIOLATION
    if v is None:
        print(f"ok waypoints={len(traj.waypoints)} resolution={args.resolution}")
        return EXIT_OK
    print("violation: " + v.describe())
    return EXIT_VIOLATION


def _bench_one(dual, scenario, planner, args):
    try:
        _check_compat(dual, scenario)
        model = dual.model
        start, target = scenario.configs(model)
        request = PlanRequest(start, target, scenario.occupancy, _options(args))
        t0 = time.perf_counter()
        traj = _run_planner(planner, dual, model, request, args.pair_budget)
        dt = time.perf_counter() - t0
        v = validate_trajectory(model, traj.waypoints, scenario.occupancy, args.resolution)
        if v is not None:  # never expected; recorded rather than trusted
            return BenchRow(scenario.scenario_id, planner, False, dt, traj.cost,
                            traj.stats.pairs_expanded, traj.stats.fallback_used, "InvalidTrajectory")
        return BenchRow(scenario.scenario_id, planner, True, dt, traj.cost,
                        traj.stats.pairs_expanded, traj.stats.fallback_used)
    except (E.DualDRMError, CliError) as exc:
        st = getattr(exc, "stats", None)
        return BenchRow(scenario.scenario_id, planner, False, None, None,
                        st.pairs_expanded if st else 0, bool(st and st.fallback_used),
                        failure_kind(exc))


def cmd_bench(args) -> int:
    planners = [p.strip() for p in args.planners.split(",") if p.strip()]
    bad = [p for p in planners if p not in PLANNERS]
    if bad or not planners:
        raise CliError("UsageError", f"unknown planner(s): {','.join(bad) or '(none)'}", EXIT_USAGE)
    files = sorted(Path(args.scenario_dir).glob("*.json"))
    if args.limit is not None:
        files = files[:args.limit]
    if not files:
        raise CliError("UsageError", f"no scenario files in {args.scenario_dir}", EXIT_USAGE)
    dual = load_dual(args.roadmap)
    scenarios = sorted((load_scenario(f) for f in files), key=lambda s: s.scenario_id)
    jobs = [(sc, p) for sc in scenarios for p in planners]
    # one worker by default so timings are not skewed by contention
    with ThreadPoolExecutor(max_workers=_threads(1)) as pool:
        rows = list(pool.map(lambda job: _bench_one(dual, job[0], job[1], args), jobs))
    paths = write_report(rows, planners, args.out, args.omit_timing, not args.no_figure)
    for p in planners:
        mine = [r for r in rows if r.planner == p]
        ok = sum(r.success for r in mine)
        print(f"planner={p} success={ok}/{len(mine)}")
    print("wrote " + " ".join(str(x) for x in paths))
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.count < 1:
        raise CliError("UsageError", "--count must be >= 1", EXIT_USAGE)
    model = _load_robot(args.robot)
    grid = _grid(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = ShelfParams()
    for i in range(args.count):
        sc = generate_shelf_scenario(model, grid, args.seed, i, params)
        save_scenario(sc, out / f"{sc.scenario_id}.json")
    print(f"wrote {args.count} scenarios to {out}")
    return EXIT_OK


COMMANDS = {"build": cmd_build, "plan": cmd_plan, "check": cmd_check, "bench": cmd_bench,
            "gen": cmd_gen}


def _report_error(kind, message, code):
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        return _report_error(exc.kind, str(exc), exc.code)
    except (E.DualDRMError, OSError) as exc:
        return _report_error(failure_kind(exc), str(exc), exit_code_for(exc))
    except ValueError as exc:
        return _report_error("UsageError", str(exc), EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
