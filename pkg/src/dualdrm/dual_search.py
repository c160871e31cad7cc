"""Best-first search over the implicit composed graph of two roadmaps.

A search state is a same-torso node pair ``(a, b)``.  A transition moves each
arm along one of its roadmap edges or keeps it in place (never both in place),
and the two resulting nodes must share a torso index.  Each arm keeps its own
cost-to-come ``g`` and priority ``f = g + h(node)``, where ``h`` is either the
chain-metric distance to the arm's target node or the exact distance to it on
the arm's own masked roadmap; a pair is queued with priority ``max(f1, f2)``.
Ties go to the lower ``f1 + f2``, then to the deeper pair (larger
``g1 + g2``), then to the lower node ids.

Two expansion modes:

``restricted``
    For every neighbour of one arm only the lowest-``f`` torso-compatible,
    non-inter-colliding neighbour of the other arm is paired with it (both arm
    orders are tried).  One label per pair; a pair is re-queued when a path
    with a strictly lower ``(max(g1, g2), g1 + g2)`` reaches it.  Fast but
    incomplete.

``exhaustive``
    Every torso-compatible neighbour pair is generated and each pair keeps
    the Pareto front of its ``(g1, g2)`` labels.  Complete on the masked
    composed graph, and the first target label popped minimises
    ``(max(G1, G2), G1 + G2)``.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .dual_roadmap import DualRoadmap, NodePair, check_pair
from .errors import ContractViolation, LimitExceeded, NoPath
from .roadmap import Roadmap, ValidityMask, roadmap_distances

RESTRICTED = "restricted"
EXHAUSTIVE = "exhaustive"
# per-arm heuristics: straight-line chain metric, or exact distance on the masked roadmap
METRIC = "metric"
ROADMAP = "roadmap"


@dataclass
class SearchStats:
    pairs_expanded: int = 0
    pairs_generated: int = 0
    queue_peak: int = 0
    fallback_used: bool = False
    searches: int = 0

    def merge(self, other: "SearchStats"):
        self.pairs_expanded += other.pairs_expanded
        self.pairs_generated += other.pairs_generated
        self.queue_peak = max(self.queue_peak, other.queue_peak)
        self.fallback_used |= other.fallback_used
        self.searches += other.searches

    def as_dict(self) -> dict:
        return {"pairs_expanded": self.pairs_expanded, "pairs_generated": self.pairs_generated,
                "queue_peak": self.queue_peak, "fallback_used": self.fallback_used,
                "searches": self.searches}


@dataclass(frozen=True)
class SearchLimits:
    max_expansions: int | None = None
    time_budget: float | None = None
    # restricted mode: how many lowest-f partners to pair with each neighbour
    pair_width: int = 1
    heuristic: str = METRIC


@dataclass
class SearchResult:
    path: list
    g1: float
    g2: float
    mode: str
    stats: SearchStats
    popped_priorities: list = field(default_factory=list, repr=False)

    @property
    def cost(self) -> tuple:
        """``(max(g1, g2), g1 + g2)``: the pair-path cost ordering."""
        return (max(self.g1, self.g2), self.g1 + self.g2)


def edge_key(arm: int, u: int, v: int) -> tuple:
    return (arm, u, v) if u < v else (arm, v, u)


class _ArmView:
    """Per-query cached neighbourhood of one roadmap (mask + blocked edges applied)."""

    __slots__ = ("arm", "nbr_cache", "valid", "h", "adj_offsets", "adj_nbrs", "edge_lengths",
                 "torso_of", "blocked")

    def __init__(self, arm: int, r: Roadmap, mask: ValidityMask, target_node: int, blocked,
                 heuristic: str):
        self.arm = arm
        self.blocked = {(u, v) for (arm_, u, v) in blocked if arm_ == arm}
        if heuristic == METRIC:
            h = r.distances_to(np.arange(r.node_count), r.configs[target_node])
        elif heuristic == ROADMAP:
            h = roadmap_distances(r, mask, target_node, self.blocked)
        else:
            raise ValueError(f"unknown heuristic {heuristic!r}")
        # nodes that cannot reach this arm's target are treated as masked
        self.valid = mask.valid & np.isfinite(h)
        self.h = h.tolist()
        self.adj_offsets = r.adj_offsets
        self.adj_nbrs = r.adj_nbrs
        self.edge_lengths = r.edge_lengths
        self.torso_of = r.torso_of
        self.nbr_cache = {}

    def neighbors(self, node: int) -> list:
        """[(nbr, edge length, torso index)] over valid, unblocked edges."""
        out = self.nbr_cache.get(node)
        if out is None:
            lo, hi = self.adj_offsets[node], self.adj_offsets[node + 1]
            nb = self.adj_nbrs[lo:hi]
            ok = self.valid[nb]
            nb = nb[ok]
            if len(nb):
                dist = self.edge_lengths[lo:hi][ok]
                out = list(zip(nb.tolist(), dist.tolist(), self.torso_of[nb].tolist()))
                if self.blocked:
                    out = [e for e in out
                           if ((node, e[0]) if node < e[0] else (e[0], node)) not in self.blocked]
            else:
                out = []
            self.nbr_cache[node] = out
        return out


class _InterView:
    __slots__ = ("dual", "cache")

    def __init__(self, dual: DualRoadmap):
        self.dual = dual
        self.cache = {}

    def partners(self, a: int) -> frozenset:
        s = self.cache.get(a)
        if s is None:
            s = frozenset(self.dual.inter1(a).tolist())
            self.cache[a] = s
        return s


def _validate_endpoints(dual, mask1, mask2, start, target):
    for name, p in (("start", start), ("target", target)):
        a, b = check_pair(dual, p)
        if not (mask1.valid[a] and mask2.valid[b]):
            raise ContractViolation(f"{name} pair {p} contains a masked node")
        if dual.pair_inter_colliding(a, b):
            raise ContractViolation(f"{name} pair {p} is inter-arm colliding")


def dual_graph_search(dual: DualRoadmap, mask1: ValidityMask, mask2: ValidityMask,
                      blocked_edges, start, target, mode: str = RESTRICTED,
                      limits: SearchLimits = SearchLimits(),
                      record_priorities: bool = False) -> SearchResult:
    """Search a pair path from ``start`` to ``target``.

    ``blocked_edges`` holds ``(arm, u, v)`` triples (``u < v``) that may not be
    traversed.  Raises :class:`NoPath` when the queue empties and
    :class:`LimitExceeded` when an expansion or time budget runs out; both carry
    the search statistics in ``.stats``.
    """
    start = NodePair(int(start[0]), int(start[1]))
    target = NodePair(int(target[0]), int(target[1]))
    _validate_endpoints(dual, mask1, mask2, start, target)
    blocked_edges = blocked_edges or ()
    v1 = _ArmView(1, dual.r1, mask1, target.a, blocked_edges, limits.heuristic)
    v2 = _ArmView(2, dual.r2, mask2, target.b, blocked_edges, limits.heuristic)
    if not (v1.valid[start.a] and v2.valid[start.b]):
        raise NoPath("an arm cannot reach its target node on its own roadmap",
                     SearchStats(searches=1))
    inter = _InterView(dual)
    if mode == RESTRICTED:
        return _search_restricted(v1, v2, inter, start, target, limits, record_priorities)
    if mode == EXHAUSTIVE:
        return _search_exhaustive(v1, v2, inter, start, target, limits, record_priorities)
    raise ValueError(f"unknown search mode {mode!r}")


def escalating_search(dual: DualRoadmap, mask1: ValidityMask, mask2: ValidityMask,
                      blocked_edges, start, target, limits: SearchLimits = SearchLimits(),
                      retries: int = 2, failures: int = 0):
    """Restricted search that widens, then falls back to exhaustive mode.

    Attempt ``k`` (counting from ``failures``) pairs each neighbour with the
    ``2**k`` best partners; once ``retries`` restricted attempts have failed the
    exhaustive mode decides.  Returns ``(SearchResult, failures)`` so a caller
    re-searching after a roadmap repair can resume where it left off.  Stats of
    failed attempts are folded into the result (or into the final ``NoPath``).
    """
    stats = SearchStats()
    while True:
        mode = RESTRICTED if failures <= retries else EXHAUSTIVE
        stats.fallback_used |= mode == EXHAUSTIVE
        lim = SearchLimits(limits.max_expansions, limits.time_budget,
                           1 << min(failures, 30), limits.heuristic)
        try:
            res = dual_graph_search(dual, mask1, mask2, blocked_edges, start, target, mode, lim)
        except NoPath as exc:
            if exc.stats is not None:
                stats.merge(exc.stats)
            if mode == EXHAUSTIVE:
                raise NoPath(str(exc), stats) from None
            failures += 1
            continue
        except LimitExceeded as exc:
            if exc.stats is not None:
                stats.merge(exc.stats)
            raise LimitExceeded(str(exc), stats) from None
        stats.merge(res.stats)
        res.stats = stats
        return res, failures


def _check_limits(stats, limits, t0):
    if limits.max_expansions is not None and stats.pairs_expanded > limits.max_expansions:
        raise LimitExceeded(f"expansion budget {limits.max_expansions} exhausted", stats)
    if limits.time_budget is not None and (stats.pairs_expanded & 63) == 0:
        if time.perf_counter() - t0 > limits.time_budget:
            raise LimitExceeded(f"time budget {limits.time_budget}s exhausted", stats)


def _q(x: float) -> float:
    """Priority key with summation-order noise removed, so exact ties stay ties."""
    return round(x, 10)


def _grouped(entries, g0, h):
    """Arm neighbour entries -> {torso: [(f, node, g)] sorted by (f, node)}."""
    groups = {}
    for node, d, tor in entries:
        g = g0 + d
        groups.setdefault(tor, []).append((g + h[node], node, g))
    for lst in groups.values():
        lst.sort()
    return groups


def _search_restricted(v1, v2, inter, start, target, limits, record):
    t0 = time.perf_counter()
    stats = SearchStats(searches=1)
    h1, h2 = v1.h, v2.h
    ta, tb = target
    best = {start: (0.0, 0.0)}  # pair -> (g1, g2)
    parent = {start: None}
    heap = [(max(h1[start.a], h2[start.b]), h1[start.a] + h2[start.b], 0.0, start.a, start.b,
             0.0, 0.0)]
    popped = []
    width = max(1, limits.pair_width)
    while heap:
        prio, _, _, a, b, g1, g2 = heapq.heappop(heap)
        cur = (a, b)
        if best.get(cur) != (g1, g2):
            continue
        stats.pairs_expanded += 1
        if record:
            popped.append(prio)
        if a == ta and b == tb:
            return SearchResult(_unwind(parent, NodePair(a, b)), g1, g2, RESTRICTED, stats, popped)
        _check_limits(stats, limits, t0)

        tor = v1.torso_of[a]
        na = [(a, 0.0, tor)] + v1.neighbors(a)
        nb = [(b, 0.0, tor)] + v2.neighbors(b)
        ga = _grouped(na, g1, h1)
        gb = _grouped(nb, g2, h2)
        cands = []
        # arm1 neighbour -> best arm2 partner(s) at the same torso index
        for tor_a, lst_a in ga.items():
            lst_b = gb.get(tor_a)
            if not lst_b:
                continue
            for fa, xa, ga_ in lst_a:
                bad = inter.partners(xa)
                taken = 0
                for fb, xb, gb_ in lst_b:
                    if (xa == a and xb == b) or xb in bad:
                        continue
                    cands.append((xa, xb, ga_, gb_, fa, fb))
                    taken += 1
                    if taken >= width:
                        break
        # arm2 neighbour -> best arm1 partner(s)
        for tor_b, lst_b in gb.items():
            lst_a = ga.get(tor_b)
            if not lst_a:
                continue
            for fb, xb, gb_ in lst_b:
                taken = 0
                for fa, xa, ga_ in lst_a:
                    if (xa == a and xb == b) or xb in inter.partners(xa):
                        continue
                    cands.append((xa, xb, ga_, gb_, fa, fb))
                    taken += 1
                    if taken >= width:
                        break
        for xa, xb, ng1, ng2, fa, fb in cands:
            p = NodePair(xa, xb)
            old = best.get(p)
            if old is not None:
                m_new, m_old = max(ng1, ng2), max(old)
                if not (m_new < m_old or (m_new == m_old and ng1 + ng2 < old[0] + old[1])):
                    continue
            best[p] = (ng1, ng2)
            parent[p] = NodePair(a, b)
            heapq.heappush(heap, (_q(max(fa, fb)), _q(fa + fb), -(ng1 + ng2), xa, xb, ng1, ng2))
            stats.pairs_generated += 1
        if len(heap) > stats.queue_peak:
            stats.queue_peak = len(heap)
    raise NoPath("restricted search exhausted the queue", stats)


def _unwind(parent, node):
    path = []
    while node is not None:
        path.append(node)
        node = parent[node]
    path.reverse()
    return path


def _search_exhaustive(v1, v2, inter, start, target, limits, record):
    t0 = time.perf_counter()
    stats = SearchStats(searches=1)
    h1, h2 = v1.h, v2.h
    ta, tb = target
    # label store: parallel lists indexed by label id
    lg1, lg2, lpair, lparent, alive = [0.0], [0.0], [start], [-1], [True]
    front = {start: [0]}
    heap = [(max(h1[start.a], h2[start.b]), h1[start.a] + h2[start.b], 0.0, start.a, start.b, 0)]
    popped = []
    while heap:
        prio, _, _, a, b, lid = heapq.heappop(heap)
        if not alive[lid]:
            continue
        alive[lid] = False  # expanded labels stay in the front but are never re-expanded
        stats.pairs_expanded += 1
        if record:
            popped.append(prio)
        g1, g2 = lg1[lid], lg2[lid]
        if a == ta and b == tb:
            path = []
            k = lid
            while k >= 0:
                path.append(lpair[k])
                k = lparent[k]
            path.reverse()
            return SearchResult(path, g1, g2, EXHAUSTIVE, stats, popped)
        _check_limits(stats, limits, t0)

        tor = v1.torso_of[a]
        ga = _grouped([(a, 0.0, tor)] + v1.neighbors(a), g1, h1)
        gb = _grouped([(b, 0.0, tor)] + v2.neighbors(b), g2, h2)
        for t, lst_a in ga.items():
            lst_b = gb.get(t)
            if not lst_b:
                continue
            for fa, xa, ng1 in lst_a:
                bad = inter.partners(xa)
                for fb, xb, ng2 in lst_b:
                    if (xa == a and xb == b) or xb in bad:
                        continue
                    p = NodePair(xa, xb)
                    labels = front.get(p)
                    if labels is None:
                        labels = front[p] = []
                    dominated = False
                    keep = []
                    for k in labels:
                        if lg1[k] <= ng1 and lg2[k] <= ng2:
                            dominated = True
                            break
                        if ng1 <= lg1[k] and ng2 <= lg2[k]:
                            alive[k] = False
                        else:
                            keep.append(k)
                    if dominated:
                        continue
                    new = len(lg1)
                    lg1.append(ng1)
                    lg2.append(ng2)
                    lpair.append(p)
                    lparent.append(lid)
                    alive.append(True)
                    keep.append(new)
                    front[p] = keep
                    heapq.heappush(heap, (_q(max(fa, fb)), _q(fa + fb), -(ng1 + ng2), xa, xb, new))
                    stats.pairs_generated += 1
        if len(heap) > stats.queue_peak:
            stats.queue_peak = len(heap)
    raise NoPath("exhaustive search exhausted the queue", stats)
