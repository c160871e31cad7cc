"""Online query: prune, connect endpoints, search, verify densely, repair, shortcut."""
from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .dual_roadmap import DualRoadmap, NodePair, compose_vectors
from .dual_search import (EXHAUSTIVE, METRIC, RESTRICTED, ROADMAP, SearchLimits, SearchStats,
                          dual_graph_search, edge_key, escalating_search)
from .errors import (BudgetExceeded, GridMismatchError, InputError, LimitExceeded,
                     NoConnectableNode, NoPath, StartInCollision, TargetInCollision)
from .kinematics import FullConfig, RobotModel, collision_conditions_batch
from .roadmap import ValidityMask, build_collision_set, nearest_valid_nodes
from .voxel_world import OccupancySet

DEFAULT_RESOLUTION = 0.01
# samples this close (as a fraction of the segment) to an end node blame the node itself
NODE_BLAME_FRACTION = 0.1


@dataclass(frozen=True)
class PlanOptions:
    resolution: float = DEFAULT_RESOLUTION
    max_iterations: int = 500
    time_budget: float | None = 30.0
    shortcut: bool = True
    # "escalate": restricted first, exhaustive after restricted_retries failures
    search_policy: str = "escalate"
    restricted_retries: int = 2
    max_expansions: int | None = None
    connect_k: int = 4
    connect_torso_candidates: int = 6
    heuristic: str = ROADMAP

    def __post_init__(self):
        if not self.resolution > 0:
            raise InputError("resolution must be positive")
        if self.max_iterations < 1:
            raise InputError("iteration cap must be at least 1")
        if self.search_policy not in ("escalate", RESTRICTED, EXHAUSTIVE):
            raise InputError(f"unknown search policy {self.search_policy!r}")
        if self.heuristic not in (METRIC, ROADMAP):
            raise InputError(f"unknown heuristic {self.heuristic!r}")
        if self.restricted_retries < 0:
            raise InputError("restricted_retries must be >= 0")


@dataclass
class PlanRequest:
    start: FullConfig
    target: FullConfig
    occupancy: OccupancySet
    options: PlanOptions = field(default_factory=PlanOptions)


@dataclass
class Trajectory:
    waypoints: list  # FullConfig
    cost: float
    stats: SearchStats
    timings: dict
    planner: str = "dual"
    iterations: int = 0

    def vectors(self) -> np.ndarray:
        return np.array([w.vector for w in self.waypoints])


@dataclass(frozen=True)
class Violation:
    segment: int
    sample: int
    fraction: float
    config: np.ndarray
    conditions: tuple

    def describe(self) -> str:
        conds = ",".join(str(c) for c in self.conditions)
        return (f"segment {self.segment} sample {self.sample} (s={self.fraction:.4f}) "
                f"violates condition {conds}")


class PlanTimer:
    def __init__(self, budget):
        self.t0 = time.perf_counter()
        self.deadline = None if budget is None else self.t0 + budget
        self.timings = {"prune": 0.0, "connect": 0.0, "search": 0.0, "check": 0.0,
                        "shortcut": 0.0}

    @contextmanager
    def phase(self, name):
        t = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t

    def remaining(self):
        return None if self.deadline is None else max(0.0, self.deadline - time.perf_counter())

    def check(self, stats):
        if self.deadline is not None and time.perf_counter() > self.deadline:
            raise BudgetExceeded("time budget exhausted", stats)


# -- dense checking ------------------------------------------------------------------


def segment_fractions(q0, q1, resolution: float) -> np.ndarray:
    """Sample fractions along q0 -> q1, both ends included, max joint step <= resolution."""
    span = float(np.max(np.abs(np.asarray(q1) - np.asarray(q0)), initial=0.0))
    n = max(1, math.ceil(span / resolution - 1e-12))
    return np.linspace(0.0, 1.0, n + 1)


class SegmentChecker:
    """Dense segment checks at padding 0, memoized per (q0, q1)."""

    def __init__(self, model: RobotModel, occupancy: OccupancySet, resolution: float):
        self.model = model
        self.occupancy = occupancy
        self.resolution = resolution
        self._cache = {}

    def first_hit(self, q0, q1):
        """None when free, else (sample index, fraction, config, condition numbers)."""
        q0 = np.asarray(q0, float)
        q1 = np.asarray(q1, float)
        key = (q0.tobytes(), q1.tobytes())
        if key in self._cache:
            return self._cache[key]
        s = segment_fractions(q0, q1, self.resolution)
        Q = q0 + s[:, None] * (q1 - q0)
        Q[-1] = q1  # exact endpoint, no rounding drift
        table = collision_conditions_batch(self.model, Q, self.occupancy.grid, self.occupancy, 0.0)
        bad = np.flatnonzero(table.any(axis=1))
        out = None
        if len(bad):
            k = int(bad[0])
            out = (k, float(s[k]), Q[k], tuple(int(c) + 1 for c in np.flatnonzero(table[k])))
        self._cache[key] = out
        return out

    def free(self, q0, q1) -> bool:
        return self.first_hit(q0, q1) is None

    def first_bad_segment(self, waypoints, skip=()):
        for i in range(len(waypoints) - 1):
            if i in skip:
                continue
            hit = self.first_hit(waypoints[i], waypoints[i + 1])
            if hit is not None:
                return (i,) + hit
        return None


def _as_vec(w):
    return w.vector if isinstance(w, FullConfig) else np.asarray(w, float)


def validate_trajectory(model: RobotModel, waypoints, occupancy: OccupancySet,
                        resolution: float = DEFAULT_RESOLUTION):
    """None when every dense sample is collision-free, else the first :class:`Violation`."""
    if len(waypoints) == 0:
        raise InputError("trajectory has no waypoints")
    vecs = [_as_vec(w) for w in waypoints]
    model.check_full_limits(np.array(vecs))
    checker = SegmentChecker(model, occupancy, resolution)
    if len(vecs) == 1:
        vecs = vecs * 2
    bad = checker.first_bad_segment(vecs)
    if bad is None:
        return None
    seg, k, s, q, conds = bad
    return Violation(seg, k, s, q, conds)


def full_weights(dual: DualRoadmap) -> np.ndarray:
    return np.asarray(dual.r1.meta.get("full_weights", np.ones(dual.model.dof)), float)


def trajectory_cost(waypoints, weights) -> float:
    v = np.array([_as_vec(w) for w in waypoints])
    if len(v) < 2:
        return 0.0
    d = np.diff(v, axis=0) * weights
    return float(np.sum(np.sqrt(np.einsum("nd,nd->n", d, d))))


# -- shortcutting ---------------------------------------------------------------------


def shortcut(model: RobotModel, waypoints, occupancy: OccupancySet, resolution: float,
             checker: SegmentChecker | None = None) -> list:
    """Greedy span replacement, longest span first from each anchor.

    Returns vectors.  Each kept straight segment passes the dense check, and by
    the triangle inequality the cost never increases.
    """
    vecs = [_as_vec(w) for w in waypoints]
    if len(vecs) <= 2:
        return vecs
    checker = checker or SegmentChecker(model, occupancy, resolution)
    out = [vecs[0]]
    i = 0
    n = len(vecs)
    while i < n - 1:
        j = n - 1
        while j > i + 1 and not checker.free(vecs[i], vecs[j]):
            j -= 1
        out.append(vecs[j])
        i = j
    return out


# -- endpoint handling -------------------------------------------------------------------


def endpoint_checks(model: RobotModel, request: PlanRequest):
    model.check_full_limits(request.start.vector)
    model.check_full_limits(request.target.vector)
    grid = request.occupancy.grid
    for cfg, exc in ((request.start, StartInCollision), (request.target, TargetInCollision)):
        row = collision_conditions_batch(model, cfg.vector, grid, request.occupancy, 0.0)[0]
        if row.any():
            conds = ",".join(str(int(c) + 1) for c in np.flatnonzero(row))
            raise exc(f"configuration violates condition {conds}")


def connect_endpoint(dual: DualRoadmap, mask1: ValidityMask, mask2: ValidityMask,
                     config: FullConfig, checker: SegmentChecker, k: int = 4,
                     torso_candidates: int | None = 6, inbound: bool = False) -> NodePair:
    """Anchor pair for an off-graph configuration.

    Torso indices are tried by increasing distance from the configuration's
    torso values.  At each one the ``k`` nearest valid nodes per arm are
    paired (closest first); the first pair that is not inter-colliding and
    whose straight segment from ``config`` checks free wins.  ``inbound``
    checks the segment in the anchor -> config direction (the way a target
    connection is traversed).
    """
    r1, r2 = dual.r1, dual.r2
    t = r1.n_torso
    v = config.vector
    c1 = np.concatenate([v[:t], config.arm1_values])
    c2 = np.concatenate([v[:t], config.arm2_values])
    w_t = r1.weights[:t]
    support = r1.torso_support
    dt = np.sqrt(np.sum(((dual.torso_table[support] - v[:t]) * w_t) ** 2, axis=1))
    order = support[np.lexsort((support, dt))]
    if torso_candidates is not None:
        order = order[:torso_candidates]
    for ti in order.tolist():
        n1 = nearest_valid_nodes(r1, mask1, c1, ti, k)
        n2 = nearest_valid_nodes(r2, mask2, c2, ti, k)
        if len(n1) == 0 or len(n2) == 0:
            continue
        d1 = r1.distances_to(n1, c1)
        d2 = r2.distances_to(n2, c2)
        cands = sorted((max(x, y), x + y, a, b) for x, a in zip(d1.tolist(), n1.tolist())
                       for y, b in zip(d2.tolist(), n2.tolist()))
        for _, _, a, b in cands:
            if dual.pair_inter_colliding(a, b):
                continue
            anchor = compose_vectors(dual, [a], [b])[0]
            if checker.free(anchor, v) if inbound else checker.free(v, anchor):
                return NodePair(a, b)
    raise NoConnectableNode("no collision-free anchor pair reachable by a straight segment")


# -- main loop -------------------------------------------------------------------------------


def _blame(path, seg, frac, conds, anchors, mask1, mask2, blocked):
    """Record what to prune for a colliding graph segment; returns True if anything changed."""
    p, q = path[seg], path[seg + 1]
    moving = [arm for arm, (u, v) in ((1, (p.a, q.a)), (2, (p.b, q.b))) if u != v]
    node_side = p if frac <= NODE_BLAME_FRACTION else q if frac >= 1 - NODE_BLAME_FRACTION else None
    arms = set()
    if 1 in conds:
        arms.update(moving)
    for arm, chain_conds in ((1, (2, 4)), (2, (3, 5))):
        if any(c in conds for c in chain_conds):
            arms.add(arm)
    changed = False
    for arm in sorted(arms):
        if node_side is not None and 1 not in conds:
            node = node_side[arm - 1]
            mask = mask1 if arm == 1 else mask2
            if node not in (anchors[0][arm - 1], anchors[1][arm - 1]) and mask.valid[node]:
                mask.invalidate([node])
                changed = True
                continue
        u, v = (p.a, q.a) if arm == 1 else (p.b, q.b)
        if u != v:
            key = edge_key(arm, u, v)
            if key not in blocked:
                blocked.add(key)
                changed = True
    if not changed:
        for arm in moving:
            u, v = (p.a, q.a) if arm == 1 else (p.b, q.b)
            key = edge_key(arm, u, v)
            if key not in blocked:
                blocked.add(key)
                changed = True
    return changed


def plan(dual: DualRoadmap, model: RobotModel, request: PlanRequest, search=None,
         name: str = "dual") -> Trajectory:
    """Answer one query; raises a :class:`PlanningFailure` subclass on failure.

    ``search`` replaces the dual-roadmap search: it is called as
    ``search(mask1, mask2, blocked, start_pair, target_pair, limits)`` and
    returns ``(pair path, SearchStats)``.  Escalation is skipped in that case.
    """
    opts = request.options
    timer = PlanTimer(opts.time_budget)
    stats = SearchStats(searches=0)
    if request.occupancy.grid != dual.grid:
        raise GridMismatchError("occupancy grid does not match the roadmap grid")
    with timer.phase("prune"):
        mask1 = build_collision_set(dual.r1, request.occupancy)
        mask2 = build_collision_set(dual.r2, request.occupancy)
    endpoint_checks(model, request)
    weights = full_weights(dual)
    if request.start == request.target:
        return Trajectory([request.start], 0.0, stats, timer.timings, name)

    checker = SegmentChecker(model, request.occupancy, opts.resolution)
    with timer.phase("connect"):
        s_pair = connect_endpoint(dual, mask1, mask2, request.start, checker, opts.connect_k,
                                  opts.connect_torso_candidates)
        t_pair = connect_endpoint(dual, mask1, mask2, request.target, checker, opts.connect_k,
                                  opts.connect_torso_candidates, inbound=True)
    anchors = (s_pair, t_pair)
    blocked = set()
    failures = 0
    for iteration in range(1, opts.max_iterations + 1):
        timer.check(stats)
        limits = SearchLimits(opts.max_expansions, timer.remaining(), 1, opts.heuristic)
        with timer.phase("search"):
            try:
                if search is not None:
                    path, run_stats = search(mask1, mask2, blocked, s_pair, t_pair, limits)
                elif opts.search_policy == "escalate":
                    res, failures = escalating_search(dual, mask1, mask2, blocked, s_pair, t_pair,
                                                      limits, opts.restricted_retries, failures)
                    path, run_stats = res.path, res.stats
                else:
                    res = dual_graph_search(dual, mask1, mask2, blocked, s_pair, t_pair,
                                            opts.search_policy, limits)
                    path, run_stats = res.path, res.stats
                stats.merge(run_stats)
            except NoPath as exc:
                if exc.stats is not None:
                    stats.merge(exc.stats)
                raise NoPath(str(exc), stats) from None
            except LimitExceeded as exc:
                if exc.stats is not None:
                    stats.merge(exc.stats)
                raise BudgetExceeded(str(exc), stats) from None
        graph_vecs = compose_vectors(dual, [p.a for p in path], [p.b for p in path])
        with timer.phase("check"):
            bad = checker.first_bad_segment(graph_vecs)
        if bad is not None:
            seg, _, frac, _, conds = bad
            if not _blame(path, seg, frac, conds, anchors, mask1, mask2, blocked):
                raise NoPath("repair made no progress", stats)
            continue
        vecs = _dedupe([request.start.vector] + list(graph_vecs) + [request.target.vector])
        if opts.shortcut:
            with timer.phase("shortcut"):
                vecs = shortcut(model, vecs, request.occupancy, opts.resolution, checker)
        waypoints = [model.full_config(v) for v in vecs]
        return Trajectory(waypoints, trajectory_cost(vecs, weights), stats, timer.timings,
                          name, iteration)
    raise BudgetExceeded(f"iteration cap {opts.max_iterations} reached", stats)


def _dedupe(vecs):
    out = [np.asarray(vecs[0], float)]
    for v in vecs[1:]:
        if not np.array_equal(v, out[-1]):
            out.append(np.asarray(v, float))
    return out
