"""Single-chain dynamic roadmap over a uniform joint grid.

A roadmap stores three maps:

* node map: node id -> chain configuration (``configs``),
* adjacency map: node id -> sorted neighbour ids (CSR ``adj_offsets``/``adj_nbrs``),
* collision map: voxel id -> sorted ids of nodes colliding with that voxel
  (CSR ``cmap_offsets``/``cmap_nodes``).

Nodes are enumerated torso-major: all nodes sharing a torso grid entry have
contiguous ids, so sorted neighbour lists are automatically grouped by torso
index and ``nodes_by_torso`` is a plain offset table.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from . import persistence as fmt
from .errors import (ContractViolation, EmptyRoadmapError, FormatError, GridMismatchError,
                     InputError, NoConnectableNode, NodeCapExceeded)
from .kinematics import (RobotModel, ChainConfig, chain_self_collision_batch,
                         chain_voxel_ids_batch, robot_from_dict, robot_to_dict, BASE, TORSO)
from .voxel_world import OccupancySet, VoxelGrid

DEFAULT_NODE_CAP = 2_000_000
DEFAULT_MAX_MOVING_JOINTS = 2
_FK_CHUNK = 8192


def uniform_values(lo: float, hi: float, step: float) -> np.ndarray:
    """``lo, lo+step, ...`` up to ``hi`` (inclusive, with a 1e-9 relative slack)."""
    if not step > 0:
        raise InputError(f"discretization step must be positive, got {step}")
    if hi < lo:
        raise InputError(f"range [{lo}, {hi}] is inverted")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n, dtype=float)


def _per_joint(value, n, what):
    vals = list(value) if np.ndim(value) else [value] * n
    if len(vals) != n:
        raise InputError(f"{what}: expected {n} entries, got {len(vals)}")
    return [float(v) for v in vals]


def _ranges(joints, override, what):
    if override is None:
        return [tuple(j.limits) for j in joints]
    if len(override) != len(joints):
        raise InputError(f"{what}: expected {len(joints)} ranges, got {len(override)}")
    out = []
    for j, (lo, hi) in zip(joints, override):
        lo, hi = float(lo), float(hi)
        if lo < j.limits[0] - 1e-9 or hi > j.limits[1] + 1e-9:
            raise InputError(f"{what}: range [{lo}, {hi}] exceeds joint limits {j.limits}")
        out.append((lo, hi))
    return out


@dataclass(frozen=True)
class TorsoGrid:
    """Uniform discretization of the shared torso joints.

    Index ``t`` enumerates the Cartesian product of per-joint value lists in
    row-major order (first joint slowest).
    """

    values: tuple  # per-joint 1-D arrays
    steps: tuple
    ranges: tuple

    @classmethod
    def build(cls, model: RobotModel, steps, ranges=None) -> "TorsoGrid":
        steps = _per_joint(steps, model.n_torso, "torso steps")
        rng = _ranges(model.torso, ranges, "torso ranges")
        vals = tuple(uniform_values(lo, hi, s) for (lo, hi), s in zip(rng, steps))
        return cls(vals, tuple(steps), tuple(rng))

    @property
    def shape(self) -> tuple:
        return tuple(len(v) for v in self.values)

    @cached_property
    def table(self) -> np.ndarray:
        """(G, T) array of torso sub-configurations, row t = torso index t."""
        mesh = np.meshgrid(*self.values, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def __len__(self):
        return int(np.prod(self.shape))


@dataclass(eq=False)
class ValidityMask:
    """Per-query node validity overlay; the roadmap itself is never mutated."""

    valid: np.ndarray
    epoch: int = 0

    def __len__(self):
        return len(self.valid)

    def invalidate(self, node_ids):
        self.valid[np.asarray(node_ids, dtype=np.int64)] = False
        self.epoch += 1

    def is_valid(self, node: int) -> bool:
        return bool(self.valid[node])

    def copy(self) -> "ValidityMask":
        return ValidityMask(self.valid.copy(), self.epoch)

    @property
    def invalid_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.valid)


@dataclass(frozen=True, eq=False)
class Roadmap:
    chain_id: int
    configs: np.ndarray  # (N, D) chain vectors
    torso_of: np.ndarray  # (N,)
    torso_table: np.ndarray  # (G, T)
    torso_offsets: np.ndarray  # (G+1,) node id ranges per torso index
    adj_offsets: np.ndarray  # (N+1,)
    adj_nbrs: np.ndarray
    cmap_offsets: np.ndarray  # (V+1,)
    cmap_nodes: np.ndarray
    grid: VoxelGrid
    padding: float
    weights: np.ndarray  # (D,) chain metric weights
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("configs", "torso_of", "torso_table", "torso_offsets", "adj_offsets",
                     "adj_nbrs", "cmap_offsets", "cmap_nodes", "weights"):
            a = np.asarray(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    # -- basic accessors -------------------------------------------------------

    @property
    def node_count(self) -> int:
        return len(self.configs)

    @property
    def edge_count(self) -> int:
        return len(self.adj_nbrs) // 2

    @property
    def n_torso(self) -> int:
        return self.torso_table.shape[1]

    def neighbors(self, node: int) -> np.ndarray:
        return self.adj_nbrs[self.adj_offsets[node]:self.adj_offsets[node + 1]]

    def nodes_by_torso(self, torso_index: int) -> np.ndarray:
        return np.arange(self.torso_offsets[torso_index], self.torso_offsets[torso_index + 1])

    def collision_nodes(self, voxel_id: int) -> np.ndarray:
        return self.cmap_nodes[self.cmap_offsets[voxel_id]:self.cmap_offsets[voxel_id + 1]]

    def chain_config(self, node: int) -> ChainConfig:
        v = self.configs[node]
        return ChainConfig(v[:self.n_torso], v[self.n_torso:])

    @cached_property
    def torso_support(self) -> np.ndarray:
        """Torso indices holding at least one node."""
        return np.flatnonzero(np.diff(self.torso_offsets) > 0)

    def distance(self, a, b) -> float:
        d = (np.asarray(a, float) - np.asarray(b, float)) * self.weights
        return float(np.sqrt(d @ d))

    def distances_to(self, nodes, target_vector) -> np.ndarray:
        d = (self.configs[nodes] - np.asarray(target_vector, float)) * self.weights
        return np.sqrt(np.einsum("nd,nd->n", d, d))

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        """Chain-metric length of every adjacency entry (aligned with ``adj_nbrs``)."""
        rows = np.repeat(np.arange(self.node_count), np.diff(self.adj_offsets))
        d = (self.configs[self.adj_nbrs] - self.configs[rows]) * self.weights
        out = np.sqrt(np.einsum("nd,nd->n", d, d))
        out.setflags(write=False)
        return out

    def new_mask(self) -> ValidityMask:
        return ValidityMask(np.ones(self.node_count, dtype=bool))

    @cached_property
    def compat(self) -> fmt.CompatMeta:
        return fmt.CompatMeta(self.grid.spec(), self.padding, tuple(self.meta["full_weights"]))

    def __eq__(self, other):
        if not isinstance(other, Roadmap):
            return NotImplemented
        return roadmap_payload(self) == roadmap_payload(other)


# -- construction ---------------------------------------------------------------

def _offset_patterns(dof: int, max_moving: int) -> np.ndarray:
    pats = []
    for k in range(1, min(max_moving, dof) + 1):
        for joints in itertools.combinations(range(dof), k):
            for signs in itertools.product((-1, 1), repeat=k):
                off = np.zeros(dof, dtype=np.int64)
                off[list(joints)] = signs
                pats.append(off)
    return np.array(pats, dtype=np.int64).reshape(-1, dof)


def _csr(keys: np.ndarray, values: np.ndarray, n_keys: int):
    """Sort (key, value) pairs and return CSR offsets + values (duplicates removed)."""
    if len(keys) == 0:
        return np.zeros(n_keys + 1, dtype=np.int64), np.empty(0, dtype=np.int64)
    stride = int(values.max()) + 1
    packed = np.unique(keys.astype(np.int64) * stride + values.astype(np.int64))
    k, v = packed // stride, packed % stride
    offsets = np.zeros(n_keys + 1, dtype=np.int64)
    np.cumsum(np.bincount(k, minlength=n_keys), out=offsets[1:])
    return offsets, v


@dataclass
class Candidates:
    """Intermediate build stage: the full grid product and which entries survive."""

    chain_id: int
    torso: TorsoGrid
    arm_values: tuple
    arm_steps: tuple
    arm_ranges: tuple
    keep: np.ndarray  # (n_candidates,) bool

    @property
    def shape(self) -> tuple:
        return self.torso.shape + tuple(len(v) for v in self.arm_values)

    @property
    def arm_count(self) -> int:
        return int(np.prod([len(v) for v in self.arm_values]))

    def configs(self, flat_ids: np.ndarray) -> np.ndarray:
        midx = np.stack(np.unravel_index(flat_ids, self.shape), axis=1)
        cols = [v[midx[:, k]] for k, v in enumerate(self.torso.values + self.arm_values)]
        return np.stack(cols, axis=1) if cols else np.zeros((len(flat_ids), 0))


def enumerate_candidates(model: RobotModel, chain_id: int, torso: TorsoGrid, arm_steps,
                         arm_ranges=None, constraint_hook=None,
                         node_cap: int = DEFAULT_NODE_CAP) -> Candidates:
    """Grid product for one chain minus self-colliding and hook-rejected entries."""
    joints = model.arm_joints(chain_id)
    steps = _per_joint(arm_steps, len(joints), "arm steps")
    rng = _ranges(joints, arm_ranges, "arm ranges")
    arm_values = tuple(uniform_values(lo, hi, s) for (lo, hi), s in zip(rng, steps))
    cand = Candidates(chain_id, torso, arm_values, tuple(steps), tuple(rng), np.zeros(0, bool))
    total = int(np.prod(cand.shape))
    if total > node_cap:
        raise NodeCapExceeded(f"chain {chain_id}: {total} candidate nodes exceed the cap of {node_cap}")
    keep = np.empty(total, dtype=bool)
    for s in range(0, total, _FK_CHUNK):
        ids = np.arange(s, min(total, s + _FK_CHUNK))
        keep[ids] = ~chain_self_collision_batch(model, chain_id, cand.configs(ids))
    if constraint_hook is not None:
        for fid in np.flatnonzero(keep):
            q = cand.configs(np.array([fid]))[0]
            if not constraint_hook(model.chain_config(chain_id, q)):
                keep[fid] = False
    cand.keep = keep
    return cand


def assemble_roadmap(model: RobotModel, cand: Candidates, grid: VoxelGrid, padding: float,
                     weights=None, max_moving_joints: int = DEFAULT_MAX_MOVING_JOINTS,
                     torso_filter: np.ndarray | None = None) -> Roadmap:
    """Build node, adjacency and collision maps from surviving candidates.

    ``torso_filter`` (bool per torso index) drops whole torso indices; the dual
    builder uses it to make both chains cover the same torso support.
    """
    chain_id = cand.chain_id
    keep = cand.keep.copy()
    n_arm = cand.arm_count
    if torso_filter is not None:
        keep &= np.repeat(np.asarray(torso_filter, bool), n_arm)
    flat = np.flatnonzero(keep)
    n = len(flat)
    if n == 0:
        raise EmptyRoadmapError(f"chain {chain_id}: every candidate node was discarded")
    configs = cand.configs(flat)
    torso_of = flat // n_arm
    g = len(cand.torso)
    torso_offsets = np.zeros(g + 1, dtype=np.int64)
    np.cumsum(np.bincount(torso_of, minlength=g), out=torso_offsets[1:])

    # adjacency: one grid step in at most max_moving_joints joints
    shape = np.array(cand.shape)
    midx = np.stack(np.unravel_index(flat, cand.shape), axis=1)
    lookup = np.full(int(np.prod(shape)), -1, dtype=np.int64)
    lookup[flat] = np.arange(n)
    src, dst = [], []
    for off in _offset_patterns(len(shape), max_moving_joints):
        nb = midx + off
        ok = np.all((nb >= 0) & (nb < shape), axis=1)
        ids = np.full(n, -1, dtype=np.int64)
        ids[ok] = lookup[np.ravel_multi_index(nb[ok].T, cand.shape)]
        hit = ids >= 0
        src.append(np.flatnonzero(hit))
        dst.append(ids[hit])
    adj_offsets, adj_nbrs = _csr(np.concatenate(src), np.concatenate(dst), n)

    # collision map: torso spheres once per torso index, arm spheres per node
    bodies, _, _ = model.chain_sphere_layout(chain_id)
    torso_mask = bodies == TORSO
    arm_mask = (bodies != TORSO) & (bodies != BASE)
    keys, vals = [], []
    for t in np.flatnonzero(np.diff(torso_offsets) > 0):
        first = torso_offsets[t]
        _, vox = chain_voxel_ids_batch(model, chain_id, configs[first:first + 1], grid,
                                       padding, sphere_mask=torso_mask)
        vox = np.unique(vox)
        nodes = np.arange(first, torso_offsets[t + 1])
        keys.append(np.repeat(vox, len(nodes)))
        vals.append(np.tile(nodes, len(vox)))
    for s in range(0, n, _FK_CHUNK):
        rows, vox = chain_voxel_ids_batch(model, chain_id, configs[s:s + _FK_CHUNK], grid,
                                          padding, sphere_mask=arm_mask)
        keys.append(vox)
        vals.append(rows + s)
    cmap_offsets, cmap_nodes = _csr(np.concatenate(keys), np.concatenate(vals), grid.count)

    chain_cols = model.chain_columns(chain_id)
    full_w = np.ones(model.dof) if weights is None else np.asarray(weights, dtype=float)
    if full_w.shape != (model.dof,) or np.any(full_w <= 0):
        raise InputError(f"metric weights must be {model.dof} positive values")
    meta = {
        "chain_id": chain_id,
        "torso_steps": list(cand.torso.steps),
        "torso_ranges": [list(r) for r in cand.torso.ranges],
        "arm_steps": list(cand.arm_steps),
        "arm_ranges": [list(r) for r in cand.arm_ranges],
        "padding": padding,
        "grid": grid.spec(),
        "grid_hash": grid.grid_hash,
        "full_weights": [float(w) for w in full_w],
        "max_moving_joints": max_moving_joints,
        "robot": robot_to_dict(model),
    }
    return Roadmap(chain_id, configs, torso_of.astype(np.int64), cand.torso.table, torso_offsets,
                   adj_offsets, adj_nbrs, cmap_offsets, cmap_nodes, grid, float(padding),
                   full_w[chain_cols], meta)


def default_padding(grid: VoxelGrid) -> float:
    return 0.5 * grid.voxel_size


def build_roadmap(model: RobotModel, chain_id: int, torso_steps, arm_steps, grid: VoxelGrid,
                  padding: float | None = None, constraint_hook=None, *, torso_ranges=None,
                  arm_ranges=None, weights=None, max_moving_joints=DEFAULT_MAX_MOVING_JOINTS,
                  node_cap=DEFAULT_NODE_CAP, torso_grid: TorsoGrid | None = None) -> Roadmap:
    """Dynamic roadmap for chain ``chain_id`` over a uniform joint grid.

    Nodes are the product of the torso grid and the arm grid, minus nodes that
    self-collide or fail ``constraint_hook``.  ``padding`` defaults to half a
    voxel.
    """
    if padding is None:
        padding = default_padding(grid)
    if padding < 0:
        raise InputError("padding must be non-negative")
    torso = torso_grid or TorsoGrid.build(model, torso_steps, torso_ranges)
    cand = enumerate_candidates(model, chain_id, torso, arm_steps, arm_ranges,
                                constraint_hook, node_cap)
    return assemble_roadmap(model, cand, grid, padding, weights, max_moving_joints)


# -- queries ----------------------------------------------------------------------

def build_collision_set(roadmap: Roadmap, occupancy: OccupancySet) -> ValidityMask:
    """Mask with every node listed under an active voxel marked invalid."""
    if occupancy.grid.grid_hash != roadmap.meta["grid_hash"] or occupancy.grid != roadmap.grid:
        raise GridMismatchError("occupancy grid does not match the roadmap grid")
    mask = roadmap.new_mask()
    ids = occupancy.ids
    if len(ids):
        starts = roadmap.cmap_offsets[ids]
        lens = roadmap.cmap_offsets[ids + 1] - starts
        total = int(lens.sum())
        if total:
            shift = np.repeat(starts - np.concatenate([[0], np.cumsum(lens)[:-1]]), lens)
            mask.valid[roadmap.cmap_nodes[shift + np.arange(total)]] = False
    return mask


def _as_vector(roadmap: Roadmap, target) -> np.ndarray:
    v = target.vector if isinstance(target, ChainConfig) else np.asarray(target, float)
    if v.shape != (roadmap.configs.shape[1],):
        raise InputError("target does not match the roadmap chain dimension")
    return v


def nearest_valid_nodes(roadmap: Roadmap, mask: ValidityMask, target, torso_index=None,
                        k: int = 1) -> np.ndarray:
    """Up to ``k`` valid nodes ordered by chain metric to ``target`` (ties: lowest id)."""
    v = _as_vector(roadmap, target)
    if torso_index is None:
        cands = np.arange(roadmap.node_count)
    else:
        cands = roadmap.nodes_by_torso(int(torso_index))
    cands = cands[mask.valid[cands]]
    if len(cands) == 0:
        return cands
    d = roadmap.distances_to(cands, v)
    order = np.lexsort((cands, d))[:k]
    return cands[order]


def nearest_valid_node(roadmap: Roadmap, mask: ValidityMask, target, torso_index=None) -> int:
    """Valid node closest to ``target``, optionally restricted to one torso index."""
    found = nearest_valid_nodes(roadmap, mask, target, torso_index, 1)
    if len(found) == 0:
        where = "" if torso_index is None else f" at torso index {torso_index}"
        raise NoConnectableNode(f"no valid node in chain {roadmap.chain_id} roadmap{where}")
    return int(found[0])


def roadmap_distances(roadmap: Roadmap, mask: ValidityMask, target_node: int,
                      blocked=()) -> np.ndarray:
    """Shortest masked-roadmap path length from every node to ``target_node``.

    ``blocked`` holds ``(u, v)`` node pairs whose edge is removed.  Unreachable
    nodes get ``inf``.
    """
    n = roadmap.node_count
    deg = np.diff(roadmap.adj_offsets)
    rows = np.repeat(np.arange(n), deg)
    cols = roadmap.adj_nbrs
    keep = mask.valid[rows] & mask.valid[cols]
    if blocked:
        bu = np.array([min(u, v) for u, v in blocked], dtype=np.int64)
        bv = np.array([max(u, v) for u, v in blocked], dtype=np.int64)
        codes = np.minimum(rows, cols) * n + np.maximum(rows, cols)
        keep &= ~np.isin(codes, bu * n + bv)
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows[keep], minlength=n))])
    graph = csr_matrix((roadmap.edge_lengths[keep], cols[keep], indptr), shape=(n, n))
    return dijkstra(graph, directed=True, indices=int(target_node))


def neighbors_by_torso(roadmap: Roadmap, node: int, torso_index: int) -> np.ndarray:
    """Neighbours of ``node`` whose torso index equals ``torso_index`` (never ``node``)."""
    nbrs = roadmap.neighbors(node)
    tor = roadmap.torso_of[nbrs]
    lo = np.searchsorted(tor, torso_index, side="left")
    hi = np.searchsorted(tor, torso_index, side="right")
    return nbrs[lo:hi]


# -- persistence --------------------------------------------------------------------

def roadmap_blocks(r: Roadmap) -> list:
    return [
        ("META", r.meta),
        ("NODE", r.configs),
        ("TOFN", r.torso_of),
        ("TGRD", r.torso_table),
        ("TOFF", r.torso_offsets),
        ("AOFF", r.adj_offsets),
        ("ANBR", r.adj_nbrs),
        ("COFF", r.cmap_offsets),
        ("CNOD", r.cmap_nodes),
    ]


def roadmap_payload(r: Roadmap) -> bytes:
    return fmt.encode_blocks(roadmap_blocks(r))


def roadmap_from_reader(reader: fmt.BlockReader) -> Roadmap:
    meta = reader.take_json("META")
    try:
        grid = VoxelGrid.from_spec(meta["grid"])
        chain_id = int(meta["chain_id"])
        d = len(meta["torso_steps"]) + len(meta["arm_steps"])
        t = len(meta["torso_steps"])
        configs = reader.take_array("NODE", "f").reshape(-1, d)
        torso_of = reader.take_array("TOFN")
        torso_table = reader.take_array("TGRD", "f").reshape(-1, t)
        torso_offsets = reader.take_array("TOFF")
        adj_offsets = reader.take_array("AOFF")
        adj_nbrs = reader.take_array("ANBR")
        cmap_offsets = reader.take_array("COFF")
        cmap_nodes = reader.take_array("CNOD")
        robot = robot_from_dict(meta["robot"])
        weights = np.asarray(meta["full_weights"], float)[robot.chain_columns(chain_id)]
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"roadmap metadata is inconsistent: {exc}") from exc
    n = len(configs)
    if (len(torso_of) != n or len(adj_offsets) != n + 1 or len(cmap_offsets) != grid.count + 1
            or len(torso_offsets) != len(torso_table) + 1
            or adj_offsets[-1] != len(adj_nbrs) or cmap_offsets[-1] != len(cmap_nodes)):
        raise FormatError("roadmap arrays have inconsistent lengths")
    return Roadmap(chain_id, configs, torso_of, torso_table, torso_offsets, adj_offsets,
                   adj_nbrs, cmap_offsets, cmap_nodes, grid, float(meta["padding"]), weights, meta)


def save_roadmap(r: Roadmap, path):
    fmt.write_file(path, fmt.KIND_ROADMAP, r.compat.hash64(), roadmap_payload(r))


def load_roadmap(path, verify: bool = False) -> Roadmap:
    """Load a roadmap file.  ``verify`` re-evaluates self-collision on every node
    (constraint hooks are not serializable and are not re-checked)."""
    header, payload = fmt.read_file(path, fmt.KIND_ROADMAP)
    reader = fmt.BlockReader(fmt.decode_blocks(payload))
    r = roadmap_from_reader(reader)
    reader.done()
    fmt.check_compat_hash(header, r.compat)
    if verify:
        verify_support(r)
    return r


def verify_support(r: Roadmap, model: RobotModel | None = None):
    model = model or robot_from_dict(r.meta["robot"])
    for s in range(0, r.node_count, _FK_CHUNK):
        bad = chain_self_collision_batch(model, r.chain_id, r.configs[s:s + _FK_CHUNK])
        if np.any(bad):
            raise ContractViolation(f"node {s + int(np.argmax(bad))} is self-colliding")
