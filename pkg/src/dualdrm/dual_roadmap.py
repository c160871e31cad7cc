"""Two roadmaps sharing one torso discretization, plus inter-arm collision maps.

Node pairs ``(a, b)`` with ``a`` in roadmap 1 and ``b`` in roadmap 2 are only
meaningful when both nodes sit on the same torso grid entry; the inter-arm maps
therefore only record same-torso pairs.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from . import persistence as fmt
from .errors import ContractViolation, FormatError, InputError, PairBudgetExceeded
from .kinematics import FullConfig, ChainConfig, RobotModel, chain_arm_centers, robot_from_dict
from .roadmap import (DEFAULT_MAX_MOVING_JOINTS, DEFAULT_NODE_CAP, Roadmap, TorsoGrid,
                      ValidityMask, assemble_roadmap, default_padding, enumerate_candidates,
                      roadmap_blocks, roadmap_from_reader, verify_support)
from .voxel_world import VoxelGrid

DEFAULT_PAIR_BUDGET = 500_000_000


class NodePair(NamedTuple):
    a: int
    b: int


@dataclass(frozen=True, eq=False)
class DualRoadmap:
    r1: Roadmap
    r2: Roadmap
    inter1_offsets: np.ndarray  # CSR over r1 nodes -> sorted r2 ids
    inter1_nbrs: np.ndarray
    inter2_offsets: np.ndarray  # CSR over r2 nodes -> sorted r1 ids
    inter2_nbrs: np.ndarray
    model: RobotModel

    def __post_init__(self):
        for name in ("inter1_offsets", "inter1_nbrs", "inter2_offsets", "inter2_nbrs"):
            a = np.asarray(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def torso_table(self) -> np.ndarray:
        return self.r1.torso_table

    @property
    def grid(self) -> VoxelGrid:
        return self.r1.grid

    @property
    def padding(self) -> float:
        return self.r1.padding

    def inter1(self, a: int) -> np.ndarray:
        return self.inter1_nbrs[self.inter1_offsets[a]:self.inter1_offsets[a + 1]]

    def inter2(self, b: int) -> np.ndarray:
        return self.inter2_nbrs[self.inter2_offsets[b]:self.inter2_offsets[b + 1]]

    @property
    def inter_pair_count(self) -> int:
        return len(self.inter1_nbrs)

    def pair_inter_colliding(self, a: int, b: int) -> bool:
        row = self.inter1(a)
        k = np.searchsorted(row, b)
        return bool(k < len(row) and row[k] == b)

    def same_torso_pair_count(self) -> int:
        c1 = np.diff(self.r1.torso_offsets)
        c2 = np.diff(self.r2.torso_offsets)
        return int(np.sum(c1 * c2))

    @cached_property
    def compat(self) -> fmt.CompatMeta:
        return self.r1.compat

    def __eq__(self, other):
        if not isinstance(other, DualRoadmap):
            return NotImplemented
        return dual_payload(self) == dual_payload(other)


# -- construction ----------------------------------------------------------------

def _inter_pairs_at_torso(model: RobotModel, r1: Roadmap, r2: Roadmap, t: int, padding: float):
    """Same-torso (a, b) pairs whose arms overlap, found with a KD-tree prefilter
    and confirmed with the exact strict sphere test."""
    n1 = r1.nodes_by_torso(t)
    n2 = r2.nodes_by_torso(t)
    if len(n1) == 0 or len(n2) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    rad1 = np.array([s.radius for s in model.arm1_spheres])
    rad2 = np.array([s.radius for s in model.arm2_spheres])
    if len(rad1) == 0 or len(rad2) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    c1 = chain_arm_centers(model, 1, r1.configs[n1])  # (n1, s1, 3)
    c2 = chain_arm_centers(model, 2, r2.configs[n2])
    s1, s2 = c1.shape[1], c2.shape[1]
    ii, jj = model.inter_pairs
    allowed = np.zeros((s1, s2), dtype=bool)
    allowed[ii, jj] = True
    flat1 = c1.reshape(-1, 3)
    search_r = rad1.max() + rad2.max() + 2.0 * padding
    pairs = cKDTree(flat1).query_ball_tree(cKDTree(c2.reshape(-1, 3)), search_r)
    p_idx = np.repeat(np.arange(len(pairs)), [len(p) for p in pairs])
    if len(p_idx) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    q_idx = np.fromiter((q for p in pairs for q in p), dtype=np.int64, count=len(p_idx))
    sa, sb = p_idx % s1, q_idx % s2
    d = flat1[p_idx] - c2.reshape(-1, 3)[q_idx]
    thr = rad1[sa] + rad2[sb] + 2.0 * padding
    hit = (np.einsum("nk,nk->n", d, d) < thr * thr) & allowed[sa, sb]
    a = n1[p_idx[hit] // s1]
    b = n2[q_idx[hit] // s2]
    return a, b


def build_inter_maps(model: RobotModel, r1: Roadmap, r2: Roadmap, padding: float,
                     pair_budget: int = DEFAULT_PAIR_BUDGET):
    c1 = np.diff(r1.torso_offsets)
    c2 = np.diff(r2.torso_offsets)
    total = int(np.sum(c1 * c2))
    if total > pair_budget:
        raise PairBudgetExceeded(f"{total} same-torso pairs exceed the budget of {pair_budget}")
    aa, bb = [], []
    for t in range(len(c1)):
        a, b = _inter_pairs_at_torso(model, r1, r2, t, padding)
        aa.append(a)
        bb.append(b)
    a = np.concatenate(aa) if aa else np.empty(0, np.int64)
    b = np.concatenate(bb) if bb else np.empty(0, np.int64)
    off1, nb1 = _pair_csr(a, b, r1.node_count, r2.node_count)
    off2, nb2 = _pair_csr(b, a, r2.node_count, r1.node_count)
    return off1, nb1, off2, nb2


def _pair_csr(keys, values, n_keys, n_values):
    packed = np.unique(keys.astype(np.int64) * n_values + values.astype(np.int64))
    k, v = packed // n_values, packed % n_values
    offsets = np.zeros(n_keys + 1, dtype=np.int64)
    np.cumsum(np.bincount(k, minlength=n_keys), out=offsets[1:])
    return offsets, v


def build_dual(model: RobotModel, torso_steps, arm1_steps, arm2_steps, grid: VoxelGrid,
               padding: float | None = None, hooks=(None, None), *, torso_ranges=None,
               arm1_ranges=None, arm2_ranges=None, weights=None,
               max_moving_joints: int = DEFAULT_MAX_MOVING_JOINTS,
               node_cap: int = DEFAULT_NODE_CAP,
               pair_budget: int = DEFAULT_PAIR_BUDGET) -> DualRoadmap:
    """Build both chain roadmaps on one torso grid, then the inter-arm maps.

    Torso indices left without nodes in either chain are dropped from both, so
    the torso projections of the two supports are equal.
    """
    if padding is None:
        padding = default_padding(grid)
    torso = TorsoGrid.build(model, torso_steps, torso_ranges)
    hook1, hook2 = hooks
    cand1 = enumerate_candidates(model, 1, torso, arm1_steps, arm1_ranges, hook1, node_cap)
    cand2 = enumerate_candidates(model, 2, torso, arm2_steps, arm2_ranges, hook2, node_cap)
    alive1 = cand1.keep.reshape(len(torso), -1).any(axis=1)
    alive2 = cand2.keep.reshape(len(torso), -1).any(axis=1)
    shared = alive1 & alive2
    r1 = assemble_roadmap(model, cand1, grid, padding, weights, max_moving_joints, shared)
    r2 = assemble_roadmap(model, cand2, grid, padding, weights, max_moving_joints, shared)
    off1, nb1, off2, nb2 = build_inter_maps(model, r1, r2, padding, pair_budget)
    return DualRoadmap(r1, r2, off1, nb1, off2, nb2, model)


# -- pair operations -----------------------------------------------------------------

def check_pair(dual: DualRoadmap, pair) -> NodePair:
    a, b = int(pair[0]), int(pair[1])
    if not (0 <= a < dual.r1.node_count and 0 <= b < dual.r2.node_count):
        raise InputError(f"node pair {pair} out of range")
    if dual.r1.torso_of[a] != dual.r2.torso_of[b]:
        raise ContractViolation(
            f"node pair {pair} mixes torso indices {dual.r1.torso_of[a]} and {dual.r2.torso_of[b]}")
    return NodePair(a, b)


def pair_in_collision(dual: DualRoadmap, mask1: ValidityMask, mask2: ValidityMask, pair) -> bool:
    """Collision status of a node pair from lookups alone.

    True iff the pair is in the inter-arm map or either node is masked out.
    """
    a, b = check_pair(dual, pair)
    return (not mask1.valid[a]) or (not mask2.valid[b]) or dual.pair_inter_colliding(a, b)


def compose(pair, dual: DualRoadmap) -> FullConfig:
    a, b = check_pair(dual, pair)
    t = dual.r1.n_torso
    v1, v2 = dual.r1.configs[a], dual.r2.configs[b]
    return FullConfig(v1[:t], v1[t:], v2[t:])


def compose_vectors(dual: DualRoadmap, a_ids, b_ids) -> np.ndarray:
    """Batched compose without contract checks: (N, dof) full vectors."""
    t = dual.r1.n_torso
    v1 = dual.r1.configs[np.asarray(a_ids)]
    v2 = dual.r2.configs[np.asarray(b_ids)]
    return np.concatenate([v1, v2[:, t:]], axis=1)


def project(config: FullConfig):
    """Split a full configuration into the two chain configurations (same torso)."""
    return (ChainConfig(config.torso_values, config.arm1_values),
            ChainConfig(config.torso_values, config.arm2_values))


def all_same_torso_pairs(dual: DualRoadmap):
    """Every same-torso (a, b) pair as two flat arrays (only for small roadmaps)."""
    aa, bb = [], []
    for t in range(len(dual.torso_table)):
        n1, n2 = dual.r1.nodes_by_torso(t), dual.r2.nodes_by_torso(t)
        if len(n1) and len(n2):
            aa.append(np.repeat(n1, len(n2)))
            bb.append(np.tile(n2, len(n1)))
    if not aa:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(aa), np.concatenate(bb)


# -- persistence ------------------------------------------------------------------------

def dual_payload(d: DualRoadmap) -> bytes:
    return fmt.encode_blocks(
        [("META", {"kind": "dual", "torso_count": int(len(d.torso_table))})]
        + [("RMAP", fmt.encode_blocks(roadmap_blocks(d.r1))),
           ("RMAP", fmt.encode_blocks(roadmap_blocks(d.r2))),
           ("TGRD", d.torso_table),
           ("I1OF", d.inter1_offsets), ("I1NB", d.inter1_nbrs),
           ("I2OF", d.inter2_offsets), ("I2NB", d.inter2_nbrs)])


def save_dual(d: DualRoadmap, path):
    fmt.write_file(path, fmt.KIND_DUAL, d.compat.hash64(), dual_payload(d))


def dual_from_payload(payload: bytes) -> DualRoadmap:
    reader = fmt.BlockReader(fmt.decode_blocks(payload))
    reader.take_json("META")
    maps = []
    for _ in range(2):
        sub = fmt.BlockReader(fmt.decode_blocks(reader.take("RMAP")))
        maps.append(roadmap_from_reader(sub))
        sub.done()
    r1, r2 = maps
    table = reader.take_array("TGRD", "f").reshape(r1.torso_table.shape)
    off1, nb1 = reader.take_array("I1OF"), reader.take_array("I1NB")
    off2, nb2 = reader.take_array("I2OF"), reader.take_array("I2NB")
    reader.done()
    if not (np.array_equal(table, r1.torso_table) and np.array_equal(table, r2.torso_table)):
        raise FormatError("shared torso table does not match the roadmap blocks")
    if len(off1) != r1.node_count + 1 or len(off2) != r2.node_count + 1:
        raise FormatError("inter-map offsets have the wrong length")
    return DualRoadmap(r1, r2, off1, nb1, off2, nb2, robot_from_dict(r1.meta["robot"]))


def load_dual(path, verify: bool = False) -> DualRoadmap:
    """``verify`` re-checks both chains' nodes for self-collision, as :func:`load_roadmap` does."""
    header, payload = fmt.read_file(path, fmt.KIND_DUAL)
    d = dual_from_payload(payload)
    fmt.check_compat_hash(header, d.compat)
    if verify:
        verify_support(d.r1, d.model)
        verify_support(d.r2, d.model)
    return d
