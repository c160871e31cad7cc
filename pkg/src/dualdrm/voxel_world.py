"""Discretized workspace: voxel indexing, occupancy, and sphere/voxel overlap kernels.

Voxel ids use a linear x-fastest layout::

    id = ix + nx * (iy + ny * iz)

This layout is frozen into the roadmap file format (ids are the keys of the
voxel collision map), so it must never change.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InputError

SQRT3_2 = math.sqrt(3.0) / 2.0

# candidate (sphere, voxel) rows handled per vectorized chunk
_CHUNK = 1 << 21


@dataclass(frozen=True)
class VoxelGrid:
    min_corner: tuple
    voxel_size: float
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "min_corner", tuple(float(v) for v in self.min_corner))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        if len(self.min_corner) != 3 or len(self.dims) != 3:
            raise InputError("grid needs a 3-vector min_corner and 3 dims")
        if not self.voxel_size > 0:
            raise InputError(f"voxel_size must be positive, got {self.voxel_size}")
        if min(self.dims) < 1:
            raise InputError(f"grid dims must all be >= 1, got {self.dims}")
        if self.count >= 2**62:
            raise InputError("voxel count does not fit a 64-bit id")

    @classmethod
    def from_workspace(cls, lo, hi, voxel_size):
        """Grid covering the box ``[lo, hi]``; dims are rounded up."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if np.any(hi <= lo):
            raise InputError("workspace max corner must exceed min corner on every axis")
        dims = np.ceil((hi - lo) / voxel_size - 1e-9).astype(int)
        return cls(tuple(lo), voxel_size, tuple(np.maximum(dims, 1)))

    @property
    def count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def voxel_radius(self) -> float:
        """Radius of the sphere circumscribing one voxel cube."""
        return self.voxel_size * SQRT3_2

    @property
    def max_corner(self) -> tuple:
        return tuple(m + d * self.voxel_size for m, d in zip(self.min_corner, self.dims))

    def spec(self) -> dict:
        return {
            "min_corner": list(self.min_corner),
            "voxel_size": self.voxel_size,
            "dims": list(self.dims),
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "VoxelGrid":
        try:
            return cls(tuple(spec["min_corner"]), spec["voxel_size"], tuple(spec["dims"]))
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad grid spec: {exc}") from exc

    @cached_property
    def grid_hash(self) -> str:
        blob = json.dumps(self.spec(), sort_keys=True).encode()
        return hashlib.blake2b(blob, digest_size=8).hexdigest()

    # -- index helpers -----------------------------------------------------

    def cells_to_ids(self, cells: np.ndarray) -> np.ndarray:
        nx, ny, _ = self.dims
        cells = np.asarray(cells, dtype=np.int64)
        return cells[..., 0] + nx * (cells[..., 1] + ny * cells[..., 2])

    def ids_to_cells(self, ids) -> np.ndarray:
        nx, ny, _ = self.dims
        ids = np.asarray(ids, dtype=np.int64)
        ix = ids % nx
        iy = (ids // nx) % ny
        iz = ids // (nx * ny)
        return np.stack([ix, iy, iz], axis=-1)

    def centers(self, ids) -> np.ndarray:
        cells = self.ids_to_cells(ids)
        return np.asarray(self.min_corner) + (cells + 0.5) * self.voxel_size


def voxel_ids(grid: VoxelGrid, points) -> np.ndarray:
    """Vectorized :func:`voxel_of`; out-of-bounds points map to -1."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    cells = np.floor((pts - np.asarray(grid.min_corner)) / grid.voxel_size)
    dims = np.asarray(grid.dims)
    inb = np.all((cells >= 0) & (cells < dims), axis=1) & np.all(np.isfinite(pts), axis=1)
    ids = np.full(len(pts), -1, dtype=np.int64)
    ids[inb] = grid.cells_to_ids(cells[inb].astype(np.int64))
    return ids


def voxel_of(grid: VoxelGrid, point):
    """Voxel id containing ``point``, or ``None`` when it lies outside the grid.

    Points on the upper boundary of the grid are outside.
    """
    vid = int(voxel_ids(grid, point)[0])
    return None if vid < 0 else vid


def circumscribing_sphere(grid: VoxelGrid, voxel_id: int):
    """``(center, radius)`` of the sphere circumscribing voxel ``voxel_id``."""
    vid = int(voxel_id)
    if not 0 <= vid < grid.count:
        raise InputError(f"voxel id {voxel_id} outside [0, {grid.count})")
    return grid.centers(vid), grid.voxel_radius


@dataclass(frozen=True, eq=False)
class OccupancySet:
    """Active voxels of one grid, stored as a boolean array for O(1) membership."""

    grid: VoxelGrid
    bits: np.ndarray
    dropped: int = 0
    _ids: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (self.grid.count,):
            raise InputError("occupancy bit array length must equal the grid voxel count")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        ids = np.flatnonzero(bits).astype(np.int64)
        ids.setflags(write=False)
        object.__setattr__(self, "_ids", ids)

    @classmethod
    def empty(cls, grid: VoxelGrid) -> "OccupancySet":
        return cls(grid, np.zeros(grid.count, dtype=bool))

    @classmethod
    def from_ids(cls, grid: VoxelGrid, ids) -> "OccupancySet":
        ids = np.asarray(list(ids) if not isinstance(ids, np.ndarray) else ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= grid.count):
            raise InputError("occupied voxel id outside the grid")
        bits = np.zeros(grid.count, dtype=bool)
        bits[ids] = True
        return cls(grid, bits)

    @property
    def ids(self) -> np.ndarray:
        """Sorted active voxel ids."""
        return self._ids

    def __len__(self):
        return int(self._ids.size)

    def __contains__(self, vid) -> bool:
        return 0 <= vid < self.grid.count and bool(self.bits[vid])

    def __eq__(self, other):
        if not isinstance(other, OccupancySet):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.bits, other.bits)

    def union(self, other: "OccupancySet") -> "OccupancySet":
        if other.grid != self.grid:
            raise InputError("cannot merge occupancy sets of different grids")
        return OccupancySet(self.grid, self.bits | other.bits, self.dropped + other.dropped)


def occupancy_from_points(grid: VoxelGrid, points) -> OccupancySet:
    """Activate every voxel containing at least one point; out-of-bounds points are
    dropped and counted in ``OccupancySet.dropped``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    ids = voxel_ids(grid, pts)
    bits = np.zeros(grid.count, dtype=bool)
    bits[ids[ids >= 0]] = True
    return OccupancySet(grid, bits, dropped=int(np.count_nonzero(ids < 0)))


# -- sphere / voxel overlap ------------------------------------------------

_stencil_cache: dict = {}


def _stencil(voxel_size: float, reach: float) -> np.ndarray:
    """Cell offsets that can hold a voxel centre within ``reach`` of a point
    anywhere inside the origin cell."""
    key = (voxel_size, reach)
    st = _stencil_cache.get(key)
    if st is None:
        k = int(math.ceil(reach / voxel_size)) + 1
        r = np.arange(-k, k + 1)
        d = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
        gap = np.maximum(np.abs(d) - 0.5, 0.0) * voxel_size
        st = d[np.sum(gap * gap, axis=1) < reach * reach].astype(np.int64)
        _stencil_cache[key] = st
    return st


def _candidate_blocks(grid: VoxelGrid, centers: np.ndarray, reach: np.ndarray):
    """Yield ``(rows, ids)`` where ``ids[k]`` are voxels strictly within
    ``reach[rows[k]]`` of ``centers[rows[k]]``.  Only in-grid voxels are produced."""
    lo = np.asarray(grid.min_corner)
    vs = grid.voxel_size
    dims = np.asarray(grid.dims)
    for r in np.unique(reach):
        if r <= 0:
            continue
        sel = np.flatnonzero(reach == r)
        st = _stencil(vs, float(r))
        step = max(1, _CHUNK // len(st))
        for s in range(0, len(sel), step):
            rows = sel[s:s + step]
            c = centers[rows]
            base = np.floor((c - lo) / vs).astype(np.int64)
            cand = base[:, None, :] + st[None, :, :]
            inb = np.all((cand >= 0) & (cand < dims), axis=2)
            vc = lo + (cand + 0.5) * vs
            diff = vc - c[:, None, :]
            hit = inb & (np.einsum("mkj,mkj->mk", diff, diff) < r * r)
            ri, ki = np.nonzero(hit)
            yield rows[ri], grid.cells_to_ids(cand[ri, ki])


def sphere_voxel_hits(grid: VoxelGrid, centers, reach):
    """All (sphere index, voxel id) pairs whose centre distance is strictly below
    ``reach`` (sphere radius + inflation + voxel circumscribing radius)."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    reach = np.broadcast_to(np.asarray(reach, dtype=float), (len(centers),))
    rows, ids = [], []
    for r, v in _candidate_blocks(grid, centers, reach):
        rows.append(r)
        ids.append(v)
    if not rows:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(rows), np.concatenate(ids)


def spheres_touch_active(grid: VoxelGrid, occupancy: OccupancySet | None, centers, reach) -> np.ndarray:
    """Per-sphere flag: does any active voxel lie strictly within ``reach``?"""
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    out = np.zeros(len(centers), dtype=bool)
    if occupancy is None or len(occupancy) == 0:
        return out
    if occupancy.grid != grid:
        raise InputError("occupancy belongs to a different grid")
    reach = np.broadcast_to(np.asarray(reach, dtype=float), (len(centers),))
    bits = occupancy.bits
    for rows, ids in _candidate_blocks(grid, centers, reach):
        act = bits[ids]
        out[rows[act]] = True
    return out
