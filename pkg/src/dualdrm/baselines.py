"""Reference planners used as oracles and as the comparison baseline.

``product_astar`` materializes the masked same-torso product graph explicitly
and searches it; it shares no code with :mod:`dualdrm.dual_search` so the two
can check each other.  ``leader_follower_plan`` plans one arm on its own
roadmap and lets the other arm track a straight joint-space line, stepping to
a nearby roadmap node whenever the tracked pose collides.
"""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order

from .dual_roadmap import DualRoadmap, NodePair, compose_vectors
from .dual_search import SearchStats
from .errors import BudgetExceeded, LimitExceeded, NoPath, PairBudgetExceeded, PlanningFailure
from .roadmap import ValidityMask, build_collision_set, nearest_valid_nodes

DEFAULT_PRODUCT_BUDGET = 200_000


@dataclass
class ProductGraph:
    """Explicit masked product graph over collision-free same-torso pairs."""

    pairs: np.ndarray  # (P, 2) node pairs, sorted lexicographically
    index: dict  # (a, b) -> row in pairs
    edges: list  # per pair: list of (pair row, arm1 length, arm2 length)

    def __len__(self):
        return len(self.pairs)

    def adjacency(self) -> csr_matrix:
        rows = [i for i, out in enumerate(self.edges) for _ in out]
        cols = [j for out in self.edges for j, _, _ in out]
        n = len(self.pairs)
        return csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))


def _free_pairs(dual, mask1, mask2):
    out = []
    for t in range(len(dual.torso_table)):
        n1 = dual.r1.nodes_by_torso(t)
        n2 = dual.r2.nodes_by_torso(t)
        n1 = n1[mask1.valid[n1]]
        n2 = n2[mask2.valid[n2]]
        for a in n1.tolist():
            bad = set(dual.inter1(a).tolist())
            out.extend((a, b) for b in n2.tolist() if b not in bad)
    return out


def _arm_moves(r, mask, node, blocked, arm):
    """{neighbour: edge length} for one arm, including staying put (length 0)."""
    moves = {node: 0.0}
    for n in r.neighbors(node).tolist():
        if not mask.valid[n]:
            continue
        if (arm, min(node, n), max(node, n)) in blocked:
            continue
        moves[n] = r.distance(r.configs[node], r.configs[n])
    return moves


def build_product_graph(dual: DualRoadmap, mask1: ValidityMask, mask2: ValidityMask,
                        blocked_edges=(), budget: int = DEFAULT_PRODUCT_BUDGET) -> ProductGraph:
    """Materialize every collision-free pair and every admissible pair transition.

    A transition moves arm1 and/or arm2 along a roadmap edge (or keeps it in
    place), never keeps both in place, and lands on a same-torso free pair.
    """
    total = dual.same_torso_pair_count()
    if total > budget:
        raise PairBudgetExceeded(f"product graph has {total} same-torso pairs, budget {budget}")
    blocked = set(blocked_edges or ())
    pairs = sorted(_free_pairs(dual, mask1, mask2))
    index = {p: i for i, p in enumerate(pairs)}
    moves1, moves2 = {}, {}
    edges = []
    for a, b in pairs:
        if a not in moves1:
            moves1[a] = _arm_moves(dual.r1, mask1, a, blocked, 1)
        if b not in moves2:
            moves2[b] = _arm_moves(dual.r2, mask2, b, blocked, 2)
        out = []
        for xa, da in moves1[a].items():
            for xb, db in moves2[b].items():
                if xa == a and xb == b:
                    continue
                j = index.get((xa, xb))  # absent when torso differs or pair collides
                if j is not None:
                    out.append((j, da, db))
        out.sort()
        edges.append(out)
    arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return ProductGraph(arr, index, edges)


def product_reachable(graph: ProductGraph, start, target) -> bool:
    """Breadth-first reachability on the materialized graph."""
    s = graph.index.get(tuple(map(int, start)))
    t = graph.index.get(tuple(map(int, target)))
    if s is None or t is None:
        return False
    order = breadth_first_order(graph.adjacency(), s, directed=True, return_predecessors=False)
    return bool(np.any(order == t))


@dataclass
class ProductResult:
    path: list
    g1: float
    g2: float
    stats: SearchStats

    @property
    def cost(self) -> tuple:
        return (max(self.g1, self.g2), self.g1 + self.g2)


def product_astar(dual: DualRoadmap, masks, blocked_edges, start, target,
                  budget: int = DEFAULT_PRODUCT_BUDGET, graph: ProductGraph | None = None,
                  max_expansions: int | None = None, informed: bool = True) -> ProductResult:
    """Optimal pair path on the materialized product graph.

    Minimizes ``(max(G1, G2), G1 + G2)`` lexicographically, where ``Gi`` is arm
    i's path length.  That ordering is not additive, so every pair keeps the
    set of non-dominated ``(g1, g2)`` labels.  With ``informed`` the heuristic
    for each arm is its chain-metric distance to the target node; without it
    the search is uniform-cost over the product graph.
    """
    mask1, mask2 = masks
    if graph is None:
        graph = build_product_graph(dual, mask1, mask2, blocked_edges, budget)
    stats = SearchStats(searches=1)
    s = graph.index.get((int(start[0]), int(start[1])))
    t = graph.index.get((int(target[0]), int(target[1])))
    if s is None or t is None:
        raise NoPath("start or target pair is not collision-free", stats)
    ta, tb = graph.pairs[t]
    r1, r2 = dual.r1, dual.r2
    h1 = r1.distances_to(graph.pairs[:, 0], r1.configs[ta])
    h2 = r2.distances_to(graph.pairs[:, 1], r2.configs[tb])
    if not informed:
        h1 = np.zeros_like(h1)
        h2 = np.zeros_like(h2)

    labels = [(0.0, 0.0, s, -1)]  # (g1, g2, pair row, parent label)
    fronts = {s: [0]}
    closed = set()
    heap = [(max(h1[s], h2[s]), h1[s] + h2[s], 0.0, s, 0)]
    while heap:
        _, _, _, i, lab = heapq.heappop(heap)
        if lab in closed or lab not in fronts.get(i, ()):
            continue
        closed.add(lab)
        stats.pairs_expanded += 1
        if max_expansions is not None and stats.pairs_expanded > max_expansions:
            raise LimitExceeded("product search expansion budget exhausted", stats)
        g1, g2 = labels[lab][0], labels[lab][1]
        if i == t:
            path = []
            while lab >= 0:
                path.append(NodePair(*map(int, graph.pairs[labels[lab][2]])))
                lab = labels[lab][3]
            return ProductResult(path[::-1], g1, g2, stats)
        for j, d1, d2 in graph.edges[i]:
            n1, n2 = g1 + d1, g2 + d2
            front = fronts.setdefault(j, [])
            if any(labels[k][0] <= n1 and labels[k][1] <= n2 for k in front):
                continue
            front[:] = [k for k in front if not (n1 <= labels[k][0] and n2 <= labels[k][1])]
            labels.append((n1, n2, j, lab))
            front.append(len(labels) - 1)
            f1, f2 = n1 + h1[j], n2 + h2[j]
            # keys rounded so equal-cost ties are not split by summation-order noise
            heapq.heappush(heap, (round(max(f1, f2), 10), round(f1 + f2, 10), -(n1 + n2), j,
                                  len(labels) - 1))
            stats.pairs_generated += 1
        stats.queue_peak = max(stats.queue_peak, len(heap))
    raise NoPath("product graph search exhausted", stats)


def pair_path_cost(dual: DualRoadmap, path) -> tuple:
    """(G1, G2): per-arm chain-metric length of a pair path."""
    g1 = g2 = 0.0
    for p, q in zip(path, path[1:]):
        g1 += dual.r1.distance(dual.r1.configs[p[0]], dual.r1.configs[q[0]])
        g2 += dual.r2.distance(dual.r2.configs[p[1]], dual.r2.configs[q[1]])
    return g1, g2


def product_oracle_plan(dual: DualRoadmap, model, request,
                        budget: int = DEFAULT_PRODUCT_BUDGET):
    """The full planning pipeline with the product-graph search swapped in."""
    from .planner import plan

    if dual.same_torso_pair_count() > budget:
        raise BudgetExceeded(f"{dual.same_torso_pair_count()} same-torso pairs exceed the "
                             f"product-graph budget {budget}", SearchStats())

    def search(mask1, mask2, blocked, s, t, limits):
        res = product_astar(dual, (mask1, mask2), blocked, s, t, budget,
                            max_expansions=limits.max_expansions)
        return res.path, res.stats

    return plan(dual, model, request, search=search, name="product-oracle")


# -- leader-follower ----------------------------------------------------------------


def _single_astar(r, mask, blocked, start, goal, deadline):
    """Plain A* on one roadmap; returns the node path."""
    h = r.distances_to(np.arange(r.node_count), r.configs[goal])
    g = {start: 0.0}
    parent = {start: None}
    heap = [(h[start], start)]
    done = set()
    while heap:
        _, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == goal:
            path = []
            while u is not None:
                path.append(u)
                u = parent[u]
            return path[::-1], len(done)
        if deadline is not None and time.perf_counter() > deadline:
            raise BudgetExceeded("leader search ran out of time", SearchStats(len(done)))
        for v in r.neighbors(u).tolist():
            if not mask.valid[v] or (min(u, v), max(u, v)) in blocked:
                continue
            ng = g[u] + r.distance(r.configs[u], r.configs[v])
            if ng < g.get(v, math.inf):
                g[v] = ng
                parent[v] = u
                heapq.heappush(heap, (ng + h[v], v))
    raise NoPath("leader roadmap has no path", SearchStats(len(done)))


def leader_follower_plan(dual: DualRoadmap, model, request):
    """Baseline: arm1 leads on its roadmap, arm2 follows a straight joint-space line.

    At each leader waypoint the follower takes the linearly interpolated arm2
    values at the leader's torso.  If that pose collides it descends to the
    closest valid arm2 node at the same torso index that clears the leader.
    The final trajectory is densely checked; a colliding leader edge is
    blocked and the leader replanned, up to the iteration cap.
    """
    from .planner import (PlanTimer, SegmentChecker, Trajectory, _dedupe, connect_endpoint,
                          endpoint_checks, full_weights, shortcut, trajectory_cost)

    opts = request.options
    timer = PlanTimer(opts.time_budget)
    stats = SearchStats(searches=0)
    with timer.phase("prune"):
        mask1 = build_collision_set(dual.r1, request.occupancy)
        mask2 = build_collision_set(dual.r2, request.occupancy)
    endpoint_checks(model, request)
    weights = full_weights(dual)
    if request.start == request.target:
        return Trajectory([request.start], 0.0, stats, timer.timings, "leader-follower")
    checker = SegmentChecker(model, request.occupancy, opts.resolution)
    with timer.phase("connect"):
        s_pair = connect_endpoint(dual, mask1, mask2, request.start, checker, opts.connect_k,
                                  opts.connect_torso_candidates)
        t_pair = connect_endpoint(dual, mask1, mask2, request.target, checker, opts.connect_k,
                                  opts.connect_torso_candidates, inbound=True)
    t = dual.r1.n_torso
    arm2_start = request.start.arm2_values
    arm2_goal = request.target.arm2_values
    blocked = set()
    for _ in range(opts.max_iterations):
        timer.check(stats)
        with timer.phase("search"):
            deadline = timer.deadline
            try:
                lead, n_exp = _single_astar(dual.r1, mask1, blocked, s_pair.a, t_pair.a, deadline)
            except PlanningFailure as exc:
                stats.pairs_expanded += exc.stats.pairs_expanded
                exc.stats = stats
                raise
            stats.pairs_expanded += n_exp
            stats.searches += 1
            rows = [request.start.vector]
            m = len(lead)
            for k, a in enumerate(lead):
                frac = k / (m - 1) if m > 1 else 1.0
                want = (1 - frac) * arm2_start + frac * arm2_goal
                torso_idx = int(dual.r1.torso_of[a])
                if k == 0:
                    b = s_pair.b
                elif k == m - 1:
                    b = t_pair.b
                else:
                    b = _follower_node(dual, mask2, a, torso_idx, want, model, request, t)
                    if b is None:
                        break
                rows.append(compose_vectors(dual, [a], [b])[0])
            else:
                rows.append(request.target.vector)
                # rows[i] -> rows[i+1] follows leader edge lead[i-1] -> lead[i] for 1 <= i < m;
                # the first and last segments were verified when the endpoints were connected
                with timer.phase("check"):
                    bad = checker.first_bad_segment(rows, skip={0, len(rows) - 2})
                if bad is None:
                    waypoints = _dedupe(rows)
                    with timer.phase("shortcut"):
                        wps = shortcut(model, waypoints, request.occupancy, opts.resolution,
                                       checker=checker) if opts.shortcut else waypoints
                    configs = [model.full_config(w) for w in wps]
                    return Trajectory(configs, trajectory_cost(wps, weights), stats,
                                      timer.timings, "leader-follower")
                i = bad[0]
                u, v = lead[i - 1], lead[i]
                if u == v or (min(u, v), max(u, v)) in blocked:
                    raise NoPath("follower cannot be repaired", stats)
                blocked.add((min(u, v), max(u, v)))
                continue
            # follower had no valid node next to leader waypoint k: block the edge into it
            u, v = lead[k - 1], lead[k]
            blocked.add((min(u, v), max(u, v)))
    raise BudgetExceeded("leader-follower iteration cap reached", stats)


def _follower_node(dual, mask2, a, torso_idx, want, model, request, t):
    tv = dual.r1.configs[a][:t]
    target = np.concatenate([tv, want])
    for b in nearest_valid_nodes(dual.r2, mask2, target, torso_idx, 8).tolist():
        if not dual.pair_inter_colliding(a, b):
            return b
    return None


__all__ = ["ProductGraph", "ProductResult", "build_product_graph", "product_reachable",
           "product_astar", "product_oracle_plan", "pair_path_cost", "leader_follower_plan"]
