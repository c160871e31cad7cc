"""Robot model, forward kinematics, and the ground-truth collision predicates.

The robot is a torso chain with two arms mounted on the torso tip.  Every body
is approximated by spheres.  Two "kinematic chains" are considered: chain 1 is
torso + arm1, chain 2 is torso + arm2.  Collision of a full configuration is the
disjunction of five conditions:

    1. arm1 vs arm2 (inter-arm)
    2. self-collision within chain 1 (torso, arm1, base spheres)
    3. self-collision within chain 2
    4. chain 1 vs an active voxel
    5. chain 2 vs an active voxel

Arm-vs-torso contact counts as self-collision of that arm's chain.  Base
spheres are static and take part in self-collision only.

Configuration vectors are flat numpy arrays.  A *full* vector is laid out as
``[torso | arm1 | arm2]``; a *chain* vector for chain ``i`` as ``[torso | arm_i]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InputError, JointLimitError, ModelError
from .voxel_world import OccupancySet, VoxelGrid, sphere_voxel_hits, spheres_touch_active

LIMIT_TOL = 1e-9

BASE, TORSO, ARM1, ARM2 = 0, 1, 2, 3
BODY_NAMES = ("base", "torso", "arm1", "arm2")
CONDITION_NAMES = {
    1: "inter-arm collision",
    2: "self-collision in chain 1",
    3: "self-collision in chain 2",
    4: "chain 1 vs voxel",
    5: "chain 2 vs voxel",
}


# -- rigid transforms --------------------------------------------------------

def rpy_matrix(roll, pitch, yaw) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return rz @ ry @ rx


def make_transform(xyz=(0.0, 0.0, 0.0), rotation=None) -> np.ndarray:
    t = np.eye(4)
    if rotation is not None:
        t[:3, :3] = rotation
    t[:3, 3] = xyz
    return t


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _check_rigid(t: np.ndarray, what: str):
    if t.shape != (4, 4):
        raise ModelError(f"{what}: transform must be 4x4")
    r = t[:3, :3]
    if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0) or abs(np.linalg.det(r) - 1) > 1e-9:
        raise ModelError(f"{what}: rotation part is not orthonormal")


# -- model types -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Joint:
    kind: str
    axis: np.ndarray
    origin: np.ndarray
    limits: tuple
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic"):
            raise ModelError(f"joint {self.name!r}: unknown kind {self.kind!r}")
        axis = _frozen(self.axis)
        if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ModelError(f"joint {self.name!r}: axis must be a unit 3-vector")
        origin = _frozen(self.origin)
        _check_rigid(origin, f"joint {self.name!r} origin")
        lo, hi = (float(v) for v in self.limits)
        if not lo <= hi:
            raise ModelError(f"joint {self.name!r}: limits [{lo}, {hi}] are inverted")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "limits", (lo, hi))


@dataclass(frozen=True, eq=False)
class CollisionSphere:
    link_index: int
    local_offset: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ModelError(f"sphere radius must be positive, got {self.radius}")
        object.__setattr__(self, "local_offset", _frozen(self.local_offset))
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True, eq=False)
class BaseSphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ModelError(f"sphere radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", _frozen(self.center))
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True, eq=False)
class ChainConfig:
    torso_values: np.ndarray
    arm_values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "torso_values", _frozen(self.torso_values))
        object.__setattr__(self, "arm_values", _frozen(self.arm_values))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.torso_values, self.arm_values])

    def __eq__(self, other):
        return (isinstance(other, ChainConfig)
                and np.array_equal(self.torso_values, other.torso_values)
                and np.array_equal(self.arm_values, other.arm_values))


@dataclass(frozen=True, eq=False)
class FullConfig:
    torso_values: np.ndarray
    arm1_values: np.ndarray
    arm2_values: np.ndarray

    def __post_init__(self):
        for name in ("torso_values", "arm1_values", "arm2_values"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.torso_values, self.arm1_values, self.arm2_values])

    def chain(self, chain_id: int) -> ChainConfig:
        arm = self.arm1_values if chain_id == 1 else self.arm2_values
        return ChainConfig(self.torso_values, arm)

    def to_list(self) -> list:
        return [float(v) for v in self.vector]

    def __eq__(self, other):
        return isinstance(other, FullConfig) and np.array_equal(self.vector, other.vector)

    def __repr__(self):
        return f"FullConfig({np.array2string(self.vector, precision=4)})"


SphereRef = tuple  # (body name, index within that body's sphere list)


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Torso chain plus two arm chains mounted on the torso tip.

    ``self_collision_deny`` lists sphere pairs exempt from self-collision;
    ``self_collision_allow`` forces pairs to be checked even when they sit on
    adjacent links (which are exempt by default).  Pairs are given as
    ``((body, index), (body, index))`` with body in base/torso/arm1/arm2.
    """

    torso: tuple
    arm1: tuple
    arm2: tuple
    mount1: np.ndarray
    mount2: np.ndarray
    torso_spheres: tuple = ()
    arm1_spheres: tuple = ()
    arm2_spheres: tuple = ()
    base_spheres: tuple = ()
    torso_base: np.ndarray = field(default_factory=lambda: np.eye(4))
    self_collision_deny: frozenset = frozenset()
    self_collision_allow: frozenset = frozenset()
    name: str = "robot"

    def __post_init__(self):
        for attr in ("torso", "arm1", "arm2", "torso_spheres", "arm1_spheres",
                     "arm2_spheres", "base_spheres"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        for attr in ("mount1", "mount2", "torso_base"):
            t = _frozen(getattr(self, attr))
            _check_rigid(t, attr)
            object.__setattr__(self, attr, t)
        if not (self.torso and self.arm1 and self.arm2):
            raise ModelError("torso and both arms need at least one joint")
        for body, joints, spheres in (("torso", self.torso, self.torso_spheres),
                                      ("arm1", self.arm1, self.arm1_spheres),
                                      ("arm2", self.arm2, self.arm2_spheres)):
            for s in spheres:
                if not 0 <= s.link_index < len(joints):
                    raise ModelError(f"{body} sphere link_index {s.link_index} out of range")
        deny = frozenset(frozenset(map(tuple, p)) for p in self.self_collision_deny)
        allow = frozenset(frozenset(map(tuple, p)) for p in self.self_collision_allow)
        for pair in deny | allow:
            for ref in pair:
                self._sphere_count(ref)
        object.__setattr__(self, "self_collision_deny", deny)
        object.__setattr__(self, "self_collision_allow", allow)

    def _sphere_count(self, ref):
        body, idx = ref
        lists = {"base": self.base_spheres, "torso": self.torso_spheres,
                 "arm1": self.arm1_spheres, "arm2": self.arm2_spheres}
        if body not in lists or not 0 <= idx < len(lists[body]):
            raise ModelError(f"sphere reference {ref!r} is invalid")

    # -- dimensions and slices ----------------------------------------------

    @property
    def n_torso(self) -> int:
        return len(self.torso)

    def n_arm(self, chain_id: int) -> int:
        return len(self.arm1 if chain_id == 1 else self.arm2)

    @property
    def dof(self) -> int:
        return len(self.torso) + len(self.arm1) + len(self.arm2)

    def chain_dof(self, chain_id: int) -> int:
        return self.n_torso + self.n_arm(chain_id)

    def arm_joints(self, chain_id: int) -> tuple:
        _check_chain(chain_id)
        return self.arm1 if chain_id == 1 else self.arm2

    def chain_joints(self, chain_id: int) -> tuple:
        return self.torso + self.arm_joints(chain_id)

    def chain_columns(self, chain_id: int) -> np.ndarray:
        """Indices of chain ``chain_id``'s values inside a full vector."""
        _check_chain(chain_id)
        t, a1 = self.n_torso, len(self.arm1)
        arm = np.arange(t, t + a1) if chain_id == 1 else np.arange(t + a1, self.dof)
        return np.concatenate([np.arange(t), arm])

    @cached_property
    def full_limits(self) -> np.ndarray:
        return np.array([j.limits for j in self.torso + self.arm1 + self.arm2])

    def chain_limits(self, chain_id: int) -> np.ndarray:
        return np.array([j.limits for j in self.chain_joints(chain_id)])

    # -- configuration helpers ------------------------------------------------

    def full_config(self, vector) -> FullConfig:
        v = np.asarray(vector, dtype=float).ravel()
        if v.shape != (self.dof,):
            raise InputError(f"expected {self.dof} joint values, got {v.size}")
        t, a1 = self.n_torso, len(self.arm1)
        return FullConfig(v[:t], v[t:t + a1], v[t + a1:])

    def chain_config(self, chain_id: int, vector) -> ChainConfig:
        v = np.asarray(vector, dtype=float).ravel()
        if v.shape != (self.chain_dof(chain_id),):
            raise InputError(f"expected {self.chain_dof(chain_id)} chain values, got {v.size}")
        return ChainConfig(v[:self.n_torso], v[self.n_torso:])

    def check_full_limits(self, vectors):
        _check_limits(np.atleast_2d(vectors), self.full_limits)

    def check_chain_limits(self, chain_id, vectors):
        _check_limits(np.atleast_2d(vectors), self.chain_limits(chain_id))

    # -- sphere tables ---------------------------------------------------------

    @cached_property
    def _sphere_tables(self) -> dict:
        """Per body: link indices, local offsets, radii."""
        out = {}
        for body, spheres in (("torso", self.torso_spheres), ("arm1", self.arm1_spheres),
                              ("arm2", self.arm2_spheres)):
            out[body] = (np.array([s.link_index for s in spheres], dtype=np.int64),
                         np.array([s.local_offset for s in spheres]).reshape(-1, 3),
                         np.array([s.radius for s in spheres], dtype=float))
        out["base"] = (None,
                       np.array([s.center for s in self.base_spheres]).reshape(-1, 3),
                       np.array([s.radius for s in self.base_spheres], dtype=float))
        return out

    @cached_property
    def full_sphere_layout(self):
        """(bodies, indices, radii) for the full sphere order base, torso, arm1, arm2."""
        bodies, idx, radii = [], [], []
        for code, body in enumerate(BODY_NAMES):
            r = self._sphere_tables[body][2]
            bodies += [code] * len(r)
            idx += list(range(len(r)))
            radii.append(r)
        return np.array(bodies, dtype=np.int64), np.array(idx, dtype=np.int64), np.concatenate(radii)

    def chain_sphere_layout(self, chain_id: int):
        """Same as :attr:`full_sphere_layout` restricted to base, torso, arm_i."""
        bodies, idx, radii = self.full_sphere_layout
        keep = np.isin(bodies, (BASE, TORSO, ARM1 if chain_id == 1 else ARM2))
        return bodies[keep], idx[keep], radii[keep]

    def _link_of(self, body: int, idx: int) -> int:
        if body == BASE:
            return -1
        return int(self._sphere_tables[BODY_NAMES[body]][0][idx])

    def _adjacent(self, b1, l1, b2, l2) -> bool:
        if b1 > b2 or (b1 == b2 and l1 > l2):
            b1, l1, b2, l2 = b2, l2, b1, l1
        if b1 == b2:
            return b1 != BASE and abs(l1 - l2) == 1
        if b1 == BASE:
            return b2 == TORSO and l2 == 0
        if b1 == TORSO and b2 in (ARM1, ARM2):
            return l1 == self.n_torso - 1 and l2 == 0
        return False

    def _pair_checked(self, b1, i1, b2, i2) -> bool:
        ref = frozenset([(BODY_NAMES[b1], int(i1)), (BODY_NAMES[b2], int(i2))])
        if ref in self.self_collision_deny:
            return False
        if b1 == BASE and b2 == BASE:
            return False
        l1, l2 = self._link_of(b1, i1), self._link_of(b2, i2)
        if b1 == b2 and l1 == l2:
            return False
        if self._adjacent(b1, l1, b2, l2):
            return ref in self.self_collision_allow
        return True

    @cached_property
    def _self_pairs(self) -> dict:
        out = {}
        for chain_id in (1, 2):
            bodies, idx, _ = self.chain_sphere_layout(chain_id)
            ii, jj = [], []
            for p in range(len(bodies)):
                for q in range(p + 1, len(bodies)):
                    if self._pair_checked(bodies[p], idx[p], bodies[q], idx[q]):
                        ii.append(p)
                        jj.append(q)
            out[chain_id] = (np.array(ii, dtype=np.int64), np.array(jj, dtype=np.int64))
        return out

    def self_pairs(self, chain_id: int):
        """Checked sphere pairs of chain ``chain_id`` as chain-local index arrays."""
        _check_chain(chain_id)
        return self._self_pairs[chain_id]

    @cached_property
    def inter_pairs(self):
        """(arm1 sphere index, arm2 sphere index) pairs checked for inter-arm contact."""
        ii, jj = [], []
        for p in range(len(self.arm1_spheres)):
            for q in range(len(self.arm2_spheres)):
                if frozenset([("arm1", p), ("arm2", q)]) not in self.self_collision_deny:
                    ii.append(p)
                    jj.append(q)
        return np.array(ii, dtype=np.int64), np.array(jj, dtype=np.int64)


def _check_chain(chain_id):
    if chain_id not in (1, 2):
        raise InputError(f"chain id must be 1 or 2, got {chain_id!r}")


def _check_limits(q: np.ndarray, limits: np.ndarray):
    if q.shape[-1] != len(limits):
        raise InputError(f"expected {len(limits)} joint values, got {q.shape[-1]}")
    if not np.all(np.isfinite(q)):
        raise InputError("joint values must be finite")
    bad = (q < limits[:, 0] - LIMIT_TOL) | (q > limits[:, 1] + LIMIT_TOL)
    if np.any(bad):
        j = int(np.argmax(np.any(bad, axis=0)))
        raise JointLimitError(
            f"joint {j} value outside limits [{limits[j, 0]:.6g}, {limits[j, 1]:.6g}]")


# -- forward kinematics ------------------------------------------------------

def _skew(a):
    x, y, z = a
    return np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])


def chain_frames(joints: Sequence[Joint], root: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Link frames of a serial chain for a batch of joint vectors.

    ``q`` has shape (N, k); ``root`` is either one 4x4 transform or a batch
    (N, 4, 4).  Returns (N, k, 4, 4): frame k is the parent frame composed with
    the joint origin and then the joint motion.
    """
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    frames = np.empty((n, len(joints), 4, 4))
    cur = np.broadcast_to(root, (n, 4, 4))
    eye = np.eye(3)
    for k, j in enumerate(joints):
        cur = cur @ j.origin
        motion = np.zeros((n, 4, 4))
        motion[:, 3, 3] = 1.0
        if j.kind == "revolute":
            kx = _skew(j.axis)
            s = np.sin(q[:, k])[:, None, None]
            c = np.cos(q[:, k])[:, None, None]
            motion[:, :3, :3] = eye + s * kx + (1.0 - c) * (kx @ kx)
        else:
            motion[:, :3, :3] = eye
            motion[:, :3, 3] = q[:, k:k + 1] * j.axis
        cur = cur @ motion
        frames[:, k] = cur
    return frames


def _body_centers(frames: np.ndarray, links, offsets) -> np.ndarray:
    if len(links) == 0:
        return np.zeros((frames.shape[0], 0, 3))
    f = frames[:, links]  # (N, S, 4, 4)
    return np.einsum("nsij,sj->nsi", f[:, :, :3, :3], offsets) + f[:, :, :3, 3]


def _base_centers(model: RobotModel, n: int) -> np.ndarray:
    c = model._sphere_tables["base"][1]
    return np.broadcast_to(c, (n,) + c.shape)


def chain_sphere_centers(model: RobotModel, chain_id: int, q_chain) -> np.ndarray:
    """World sphere centres (N, S, 3) in chain order base, torso, arm_i."""
    _check_chain(chain_id)
    q = np.atleast_2d(np.asarray(q_chain, dtype=float))
    t = model.n_torso
    tf = chain_frames(model.torso, model.torso_base, q[:, :t])
    mount = model.mount1 if chain_id == 1 else model.mount2
    af = chain_frames(model.arm_joints(chain_id), tf[:, -1] @ mount, q[:, t:])
    body = "arm1" if chain_id == 1 else "arm2"
    tl, to, _ = model._sphere_tables["torso"]
    al, ao, _ = model._sphere_tables[body]
    return np.concatenate([_base_centers(model, len(q)), _body_centers(tf, tl, to),
                           _body_centers(af, al, ao)], axis=1)


def chain_arm_centers(model: RobotModel, chain_id: int, q_chain) -> np.ndarray:
    """World centres (N, S_arm, 3) of arm ``chain_id``'s spheres only."""
    nb, nt = len(model.base_spheres), len(model.torso_spheres)
    return chain_sphere_centers(model, chain_id, q_chain)[:, nb + nt:]


def full_sphere_centers(model: RobotModel, q_full) -> np.ndarray:
    """World sphere centres (N, S, 3) in full order base, torso, arm1, arm2."""
    q = np.atleast_2d(np.asarray(q_full, dtype=float))
    t, a1 = model.n_torso, len(model.arm1)
    tf = chain_frames(model.torso, model.torso_base, q[:, :t])
    tip = tf[:, -1]
    f1 = chain_frames(model.arm1, tip @ model.mount1, q[:, t:t + a1])
    f2 = chain_frames(model.arm2, tip @ model.mount2, q[:, t + a1:])
    tb = model._sphere_tables
    return np.concatenate([
        _base_centers(model, len(q)),
        _body_centers(tf, tb["torso"][0], tb["torso"][1]),
        _body_centers(f1, tb["arm1"][0], tb["arm1"][1]),
        _body_centers(f2, tb["arm2"][0], tb["arm2"][1]),
    ], axis=1)


@dataclass(frozen=True)
class WorldSpheres:
    centers: np.ndarray  # (S, 3)
    radii: np.ndarray  # (S,)
    bodies: np.ndarray  # (S,) body codes, see BODY_NAMES

    def of(self, body: str) -> np.ndarray:
        return self.centers[self.bodies == BODY_NAMES.index(body)]


def forward_kinematics(model: RobotModel, config: FullConfig) -> WorldSpheres:
    """World-frame spheres of every body for one configuration."""
    v = config.vector
    model.check_full_limits(v)
    bodies, _, radii = model.full_sphere_layout
    return WorldSpheres(full_sphere_centers(model, v)[0], radii, bodies)


# -- collision predicates (batched cores) ------------------------------------

def _pairs_hit(centers, radii, ii, jj, inflate=0.0) -> np.ndarray:
    if len(ii) == 0:
        return np.zeros(centers.shape[0], dtype=bool)
    d = centers[:, ii] - centers[:, jj]
    thr = radii[ii] + radii[jj] + inflate
    return np.any(np.einsum("npk,npk->np", d, d) < thr * thr, axis=1)


def chain_self_collision_batch(model: RobotModel, chain_id: int, q_chain) -> np.ndarray:
    c = chain_sphere_centers(model, chain_id, q_chain)
    _, _, radii = model.chain_sphere_layout(chain_id)
    ii, jj = model.self_pairs(chain_id)
    return _pairs_hit(c, radii, ii, jj)


def inter_arm_collision_batch(model: RobotModel, q_full, padding: float = 0.0) -> np.ndarray:
    """Each arm sphere is inflated by ``padding``."""
    c = full_sphere_centers(model, q_full)
    bodies, _, radii = model.full_sphere_layout
    off1 = int(np.flatnonzero(bodies == ARM1)[0]) if np.any(bodies == ARM1) else 0
    off2 = int(np.flatnonzero(bodies == ARM2)[0]) if np.any(bodies == ARM2) else 0
    ii, jj = model.inter_pairs
    return _pairs_hit(c, radii, ii + off1, jj + off2, 2.0 * padding)


def _voxel_reach(model, radii, grid, padding):
    return radii + padding + grid.voxel_radius


def chain_voxel_touch_batch(model, chain_id, q_chain, grid, occupancy, padding=0.0) -> np.ndarray:
    """Per-config flag: does chain ``chain_id`` (torso + arm, inflated) touch an active voxel?"""
    q = np.atleast_2d(q_chain)
    if occupancy is None or len(occupancy) == 0:
        return np.zeros(len(q), dtype=bool)
    c = chain_sphere_centers(model, chain_id, q)
    bodies, _, radii = model.chain_sphere_layout(chain_id)
    keep = bodies != BASE
    c = c[:, keep]
    reach = np.broadcast_to(_voxel_reach(model, radii[keep], grid, padding), c.shape[:2])
    hit = spheres_touch_active(grid, occupancy, c.reshape(-1, 3), reach.ravel())
    return hit.reshape(c.shape[:2]).any(axis=1)


def collision_conditions_batch(model: RobotModel, q_full, grid: VoxelGrid | None = None,
                               occupancy: OccupancySet | None = None,
                               padding: float = 0.0) -> np.ndarray:
    """Boolean table (N, 5); column k is collision condition k+1."""
    q = np.atleast_2d(np.asarray(q_full, dtype=float))
    out = np.zeros((len(q), 5), dtype=bool)
    out[:, 0] = inter_arm_collision_batch(model, q, padding)
    for chain_id in (1, 2):
        qc = q[:, model.chain_columns(chain_id)]
        out[:, chain_id] = chain_self_collision_batch(model, chain_id, qc)
        if grid is not None:
            out[:, 2 + chain_id] = chain_voxel_touch_batch(model, chain_id, qc, grid, occupancy, padding)
    return out


# -- public single-configuration predicates ----------------------------------

def chain_self_collision(model: RobotModel, chain_id: int, chain_config: ChainConfig) -> bool:
    """True iff two non-exempt spheres among torso, arm_i and base overlap."""
    v = chain_config.vector
    model.check_chain_limits(chain_id, v)
    return bool(chain_self_collision_batch(model, chain_id, v)[0])


def inter_arm_collision(model: RobotModel, config: FullConfig, padding: float = 0.0) -> bool:
    """True iff any arm1 sphere overlaps any arm2 sphere (both inflated by ``padding``)."""
    v = config.vector
    model.check_full_limits(v)
    return bool(inter_arm_collision_batch(model, v, padding)[0])


def chain_voxel_collision(model: RobotModel, chain_id: int, chain_config: ChainConfig,
                          grid: VoxelGrid, padding: float = 0.0) -> set:
    """Ids of every voxel whose circumscribing sphere overlaps a torso/arm_i sphere
    inflated by ``padding``."""
    v = chain_config.vector
    model.check_chain_limits(chain_id, v)
    return set(chain_voxel_ids_batch(model, chain_id, v, grid, padding)[1].tolist())


def chain_voxel_ids_batch(model, chain_id, q_chain, grid, padding=0.0, sphere_mask=None):
    """(config row, voxel id) hits for a batch of chain vectors (may repeat pairs)."""
    q = np.atleast_2d(q_chain)
    c = chain_sphere_centers(model, chain_id, q)
    bodies, _, radii = model.chain_sphere_layout(chain_id)
    keep = bodies != BASE
    if sphere_mask is not None:
        keep &= sphere_mask
    c = c[:, keep]
    ns = c.shape[1]
    reach = np.broadcast_to(_voxel_reach(model, radii[keep], grid, padding), (len(q), ns))
    rows, vids = sphere_voxel_hits(grid, c.reshape(-1, 3), reach.ravel())
    return rows // max(ns, 1), vids


def collision_conditions(model: RobotModel, config: FullConfig, grid: VoxelGrid | None = None,
                         occupancy: OccupancySet | None = None, padding: float = 0.0) -> tuple:
    """Numbers (1-5) of every violated collision condition; empty when free."""
    v = config.vector
    model.check_full_limits(v)
    row = collision_conditions_batch(model, v, grid, occupancy, padding)[0]
    return tuple(int(k) + 1 for k in np.flatnonzero(row))


def config_collision(model: RobotModel, config: FullConfig, grid: VoxelGrid | None = None,
                     active_voxels: OccupancySet | None = None, padding: float = 0.0) -> bool:
    """The COL oracle: true iff any of the five collision conditions holds."""
    return bool(collision_conditions(model, config, grid, active_voxels, padding))


ConstraintHook = Optional[Callable[[ChainConfig], bool]]


# -- JSON model I/O ----------------------------------------------------------

ROBOT_FORMAT_VERSION = 1


def _transform_from_json(d) -> np.ndarray:
    if d is None:
        return np.eye(4)
    xyz = d.get("xyz", [0.0, 0.0, 0.0])
    if "rotation" in d:
        rot = np.array(d["rotation"], dtype=float)
    else:
        rot = rpy_matrix(*d.get("rpy", [0.0, 0.0, 0.0]))
    return make_transform(xyz, rot)


def _transform_to_json(t: np.ndarray) -> dict:
    return {"xyz": [float(v) for v in t[:3, 3]],
            "rotation": [[float(v) for v in row] for row in t[:3, :3]]}


def _ref(s: str) -> tuple:
    body, _, idx = s.partition(":")
    return body, int(idx)


def robot_from_dict(d: dict) -> RobotModel:
    """Build a model from the JSON schema documented in ``docs/format.md``."""
    try:
        version = d.get("format_version", ROBOT_FORMAT_VERSION)
        if version != ROBOT_FORMAT_VERSION:
            raise ModelError(f"unsupported robot format_version {version}")

        def joints(section):
            return tuple(Joint(kind=j.get("kind", "revolute"), axis=j["axis"],
                               origin=_transform_from_json(j.get("origin")),
                               limits=tuple(j["limits"]), name=j.get("name", ""))
                         for j in section["joints"])

        def spheres(section):
            return tuple(CollisionSphere(s["link"], s.get("offset", [0, 0, 0]), s["radius"])
                         for s in section.get("spheres", []))

        sc = d.get("self_collision", {})
        return RobotModel(
            torso=joints(d["torso"]),
            arm1=joints(d["arm1"]),
            arm2=joints(d["arm2"]),
            mount1=_transform_from_json(d["arm1"].get("mount")),
            mount2=_transform_from_json(d["arm2"].get("mount")),
            torso_spheres=spheres(d["torso"]),
            arm1_spheres=spheres(d["arm1"]),
            arm2_spheres=spheres(d["arm2"]),
            base_spheres=tuple(BaseSphere(s["center"], s["radius"])
                               for s in d.get("base_spheres", [])),
            torso_base=_transform_from_json(d["torso"].get("base")),
            self_collision_deny=frozenset(frozenset(map(_ref, p)) for p in sc.get("deny", [])),
            self_collision_allow=frozenset(frozenset(map(_ref, p)) for p in sc.get("allow", [])),
            name=d.get("name", "robot"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"malformed robot description: {exc!r}") from exc


def robot_to_dict(model: RobotModel) -> dict:
    def joints(js):
        return [{"name": j.name, "kind": j.kind, "axis": [float(v) for v in j.axis],
                 "origin": _transform_to_json(j.origin), "limits": list(j.limits)} for j in js]

    def spheres(ss):
        return [{"link": s.link_index, "offset": [float(v) for v in s.local_offset],
                 "radius": s.radius} for s in ss]

    def pairs(ps):
        return sorted(sorted(f"{b}:{i}" for b, i in p) for p in ps)

    return {
        "format_version": ROBOT_FORMAT_VERSION,
        "name": model.name,
        "torso": {"base": _transform_to_json(model.torso_base), "joints": joints(model.torso),
                  "spheres": spheres(model.torso_spheres)},
        "arm1": {"mount": _transform_to_json(model.mount1), "joints": joints(model.arm1),
                 "spheres": spheres(model.arm1_spheres)},
        "arm2": {"mount": _transform_to_json(model.mount2), "joints": joints(model.arm2),
                 "spheres": spheres(model.arm2_spheres)},
        "base_spheres": [{"center": [float(v) for v in s.center], "radius": s.radius}
                         for s in model.base_spheres],
        "self_collision": {"deny": pairs(model.self_collision_deny),
                           "allow": pairs(model.self_collision_allow)},
    }


def load_robot(path) -> RobotModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not valid JSON ({exc})") from exc
    return robot_from_dict(data)


def save_robot(model: RobotModel, path):
    Path(path).write_text(json.dumps(robot_to_dict(model), indent=2) + "\n")
