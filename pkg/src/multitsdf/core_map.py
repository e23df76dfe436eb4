"""Hierarchical map storage: voxels, blocks, submaps and the submap collection.

Voxel data of a submap lives in one pooled array per channel so that batched
operations (integration, meshing, interpolation) can gather many blocks at
once. :class:`Block` objects are thin views onto a slot of that pool.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Optional, Set, Tuple

import numpy as np

VOXELS_PER_SIDE = 16

BlockIndex = Tuple[int, int, int]

_KEY_OFFSET = 1 << 20
_KEY_BITS = 21


class PanopticType(str, Enum):
    OBJECT = "object"
    BACKGROUND = "background"
    FREE_SPACE = "free_space"


class Activity(str, Enum):
    ACTIVE = "active"
    INACTIVE = "inactive"


class ChangeState(str, Enum):
    PERSISTENT = "persistent"
    UNOBSERVED = "unobserved"
    ABSENT = "absent"


@dataclass
class TsdfVoxel:
    distance: float = 0.0
    weight: float = 0.0
    belong_hits: int = 0
    belong_total: int = 0


@dataclass(frozen=True)
class BoundingSphere:
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 0.0

    def contains(self, point, eps: float = 1e-9) -> bool:
        d = np.asarray(point, dtype=float) - np.asarray(self.center)
        return float(np.sqrt(d @ d)) <= self.radius + eps

    def intersects(self, other: "BoundingSphere", eps: float = 1e-9) -> bool:
        d = np.asarray(other.center) - np.asarray(self.center)
        return float(np.sqrt(d @ d)) <= self.radius + other.radius + eps


def block_key(block_index) -> np.ndarray:
    """Pack integer block coordinates (..., 3) into sortable int64 keys."""
    b = np.asarray(block_index, dtype=np.int64) + _KEY_OFFSET
    return (b[..., 0] << (2 * _KEY_BITS)) | (b[..., 1] << _KEY_BITS) | b[..., 2]


def block_index_of_key(keys) -> np.ndarray:
    """Inverse of :func:`block_key`; returns an (n, 3) int64 array."""
    k = np.asarray(keys, dtype=np.int64).reshape(-1)
    mask = (1 << _KEY_BITS) - 1
    out = np.stack([k >> (2 * _KEY_BITS), (k >> _KEY_BITS) & mask, k & mask], axis=1)
    return out - _KEY_OFFSET


class Block:
    """One ``vps``-cubed chunk of voxels, backed by a slot in the submap pool."""

    __slots__ = ("index", "slot", "dirty_mesh", "_submap")

    def __init__(self, submap: "Submap", index: BlockIndex, slot: int):
        self._submap = submap
        self.index = index
        self.slot = slot
        self.dirty_mesh = True

    @property
    def distance(self) -> np.ndarray:
        return self._submap._distance[self.slot]

    @property
    def weight(self) -> np.ndarray:
        return self._submap._weight[self.slot]

    @property
    def belong_hits(self) -> np.ndarray:
        return self._submap._hits[self.slot]

    @property
    def belong_total(self) -> np.ndarray:
        return self._submap._total[self.slot]

    @property
    def voxels_per_side(self) -> int:
        return self._submap.voxels_per_side

    def voxel(self, voxel_index) -> TsdfVoxel:
        i, j, k = voxel_index
        return TsdfVoxel(
            float(self.distance[i, j, k]),
            float(self.weight[i, j, k]),
            int(self.belong_hits[i, j, k]),
            int(self.belong_total[i, j, k]),
        )

    def set_voxel(self, voxel_index, voxel: TsdfVoxel) -> None:
        i, j, k = voxel_index
        self.distance[i, j, k] = voxel.distance
        self.weight[i, j, k] = voxel.weight
        self.belong_hits[i, j, k] = voxel.belong_hits
        self.belong_total[i, j, k] = voxel.belong_total

    def origin(self) -> np.ndarray:
        """Submap-frame position of the block's minimum corner."""
        return np.asarray(self.index, dtype=float) * self._submap.block_size

    def __repr__(self) -> str:
        return f"Block(index={self.index}, slot={self.slot})"


class Submap:
    """A single panoptic entity reconstructed in its own sparse TSDF grid."""

    def __init__(
        self,
        id: int,
        panoptic_type: PanopticType,
        class_id: int,
        instance_id: int,
        voxel_size: float,
        voxels_per_side: int = VOXELS_PER_SIDE,
    ):
        if voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        self.id = id
        self.panoptic_type = PanopticType(panoptic_type)
        self.class_id = int(class_id)
        self.instance_id = int(instance_id)
        self.voxel_size = float(voxel_size)
        self.voxels_per_side = int(voxels_per_side)
        self.pose = np.eye(4)
        self.activity = Activity.ACTIVE
        self.change_state = ChangeState.PERSISTENT
        self.frames_tracked = 0
        self.frames_since_detection = 0
        self.created_run = 0
        self.blocks: Dict[BlockIndex, Block] = {}
        self.bounding_sphere = BoundingSphere()
        self.sphere_stale = False
        # Set by the meshing module; holds block meshes and the point cache.
        self.iso_surface = None
        # Blocks whose mesh depends on a removed neighbor.
        self.remesh_pending: Set[BlockIndex] = set()

        v = self.voxels_per_side
        self._capacity = 0
        self._distance = np.zeros((0, v, v, v), np.float32)
        self._weight = np.zeros((0, v, v, v), np.float32)
        self._hits = np.zeros((0, v, v, v), np.uint8)
        self._total = np.zeros((0, v, v, v), np.uint8)
        self._slot_to_index: List[BlockIndex] = []
        self._sorted_keys: Optional[np.ndarray] = None
        self._sorted_slots: Optional[np.ndarray] = None

    # -- geometry helpers --------------------------------------------------

    @property
    def truncation(self) -> float:
        return 2.0 * self.voxel_size

    @property
    def block_size(self) -> float:
        return self.voxel_size * self.voxels_per_side

    @property
    def is_free_space(self) -> bool:
        return self.panoptic_type is PanopticType.FREE_SPACE

    @property
    def is_active(self) -> bool:
        return self.activity is Activity.ACTIVE

    @property
    def is_present(self) -> bool:
        return self.is_active or self.change_state is ChangeState.PERSISTENT

    @property
    def pose_is_identity(self) -> bool:
        return np.array_equal(self.pose, np.eye(4))

    def to_submap_frame(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if np.array_equal(self.pose, np.eye(4)):
            return p
        inv = np.linalg.inv(self.pose)
        return p @ inv[:3, :3].T + inv[:3, 3]

    def to_world_frame(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if np.array_equal(self.pose, np.eye(4)):
            return p
        return p @ self.pose[:3, :3].T + self.pose[:3, 3]

    def global_voxel_index(self, points_submap) -> np.ndarray:
        """Integer voxel lattice coordinates of submap-frame points."""
        return np.floor(np.asarray(points_submap, dtype=float) / self.voxel_size).astype(np.int64)

    def voxel_centers(self, block_index) -> np.ndarray:
        """Submap-frame voxel centers of a block, shape (vps, vps, vps, 3)."""
        v = self.voxels_per_side
        r = np.arange(v)
        grid = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1)
        base = np.asarray(block_index, dtype=np.int64) * v
        return (base + grid + 0.5) * self.voxel_size

    # -- block storage -----------------------------------------------------

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def allocate_block(self, block_index) -> Block:
        key = tuple(int(c) for c in block_index)
        block = self.blocks.get(key)
        if block is not None:
            return block
        slot = len(self._slot_to_index)
        if slot >= self._capacity:
            self._grow(max(8, 2 * self._capacity))
        self._distance[slot] = 0.0
        self._weight[slot] = 0.0
        self._hits[slot] = 0
        self._total[slot] = 0
        self._slot_to_index.append(key)
        block = Block(self, key, slot)
        self.blocks[key] = block
        self.sphere_stale = True
        self._sorted_keys = None
        return block

    def allocate_blocks(self, block_indices: Iterable) -> List[Block]:
        return [self.allocate_block(b) for b in block_indices]

    def remove_block(self, block_index) -> None:
        key = tuple(int(c) for c in block_index)
        block = self.blocks.pop(key)
        last = len(self._slot_to_index) - 1
        if block.slot != last:
            moved_key = self._slot_to_index[last]
            moved = self.blocks[moved_key]
            for arr in (self._distance, self._weight, self._hits, self._total):
                arr[block.slot] = arr[last]
            moved.slot = block.slot
            self._slot_to_index[block.slot] = moved_key
        self._slot_to_index.pop()
        self.sphere_stale = True
        self._sorted_keys = None
        for off in itertools.product((0, -1), repeat=3):
            nb = (key[0] + off[0], key[1] + off[1], key[2] + off[2])
            if nb != key and nb in self.blocks:
                self.remesh_pending.add(nb)

    def _grow(self, capacity: int) -> None:
        v = self.voxels_per_side
        n = len(self._slot_to_index)

        def grown(arr):
            out = np.zeros((capacity, v, v, v), arr.dtype)
            out[:n] = arr[:n]
            return out

        self._distance = grown(self._distance)
        self._weight = grown(self._weight)
        self._hits = grown(self._hits)
        self._total = grown(self._total)
        self._capacity = capacity

    def _ensure_lookup(self) -> None:
        if self._sorted_keys is not None:
            return
        if self._slot_to_index:
            keys = block_key(np.array(self._slot_to_index, dtype=np.int64))
        else:
            keys = np.zeros(0, np.int64)
        order = np.argsort(keys)
        self._sorted_keys = keys[order]
        self._sorted_slots = order.astype(np.int64)

    def slots_of(self, block_indices) -> np.ndarray:
        """Pool slot for each block index (..., 3); -1 where unallocated."""
        self._ensure_lookup()
        keys = block_key(block_indices)
        if self._sorted_keys.size == 0:
            return np.full(keys.shape, -1, np.int64)
        pos = np.searchsorted(self._sorted_keys, keys)
        pos_c = np.minimum(pos, self._sorted_keys.size - 1)
        found = self._sorted_keys[pos_c] == keys
        return np.where(found, self._sorted_slots[pos_c], -1)

    def gather(self, global_idx) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Fetch voxels at integer lattice coordinates (n, 3).

        Returns ``(distance, weight, hits, total, allocated)``; unallocated voxels
        read as zero.
        """
        g = np.asarray(global_idx, dtype=np.int64).reshape(-1, 3)
        v = self.voxels_per_side
        bidx = np.floor_divide(g, v)
        local = g - bidx * v
        slots = self.slots_of(bidx)
        ok = slots >= 0
        flat = (local[:, 0] * v + local[:, 1]) * v + local[:, 2]
        n_vox = v ** 3
        s = np.where(ok, slots, 0)
        dist = np.zeros(len(g), np.float64)
        wt = np.zeros(len(g), np.float64)
        hits = np.zeros(len(g), np.int64)
        total = np.zeros(len(g), np.int64)
        if len(self._slot_to_index):
            dist = self._distance.reshape(-1, n_vox)[s, flat].astype(np.float64)
            wt = self._weight.reshape(-1, n_vox)[s, flat].astype(np.float64)
            hits = self._hits.reshape(-1, n_vox)[s, flat].astype(np.int64)
            total = self._total.reshape(-1, n_vox)[s, flat].astype(np.int64)
            dist[~ok] = 0.0
            wt[~ok] = 0.0
            hits[~ok] = 0
            total[~ok] = 0
        return dist, wt, hits, total, ok

    def block_arrays(self) -> Tuple[List[BlockIndex], np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Allocated block indices (slot order) and the live pool channels."""
        n = len(self._slot_to_index)
        return (
            list(self._slot_to_index),
            self._distance[:n],
            self._weight[:n],
            self._hits[:n],
            self._total[:n],
        )

    def total_weight(self) -> float:
        n = len(self._slot_to_index)
        return float(self._weight[:n].sum(dtype=np.float64))

    def __repr__(self) -> str:
        return (
            f"Submap(id={self.id}, type={self.panoptic_type.value}, class={self.class_id}, "
            f"nu={self.voxel_size}, blocks={self.num_blocks}, {self.activity.value}, "
            f"{self.change_state.value})"
        )


def global_to_voxel(submap: Submap, point) -> Tuple[BlockIndex, BlockIndex]:
    """Lattice address (block index, voxel index) of the voxel containing ``point``."""
    p = submap.to_submap_frame(np.asarray(point, dtype=float).reshape(1, 3))[0]
    g = submap.global_voxel_index(p)
    v = submap.voxels_per_side
    b = np.floor_divide(g, v)
    local = g - b * v
    return tuple(int(c) for c in b), tuple(int(c) for c in local)


def voxel_center(submap: Submap, block_index, voxel_index) -> np.ndarray:
    """World-frame center of a voxel addressed by block and in-block index."""
    g = np.asarray(block_index, dtype=np.int64) * submap.voxels_per_side + np.asarray(voxel_index)
    return submap.to_world_frame(((g + 0.5) * submap.voxel_size).reshape(1, 3))[0]


def allocate_block(submap: Submap, block_index) -> Block:
    return submap.allocate_block(block_index)


def update_bounding_sphere(submap: Submap) -> BoundingSphere:
    """Sphere around the block-center centroid enclosing every block corner."""
    if not submap.blocks:
        origin = submap.to_world_frame(np.zeros((1, 3)))[0]
        sphere = BoundingSphere(tuple(float(c) for c in origin), 0.0)
    else:
        idx = np.array(list(submap.blocks.keys()), dtype=float)
        bs = submap.block_size
        centers = (idx + 0.5) * bs
        center = centers.mean(axis=0)
        # The farthest corner of each block from the center.
        lo = idx * bs
        hi = lo + bs
        far = np.where(np.abs(lo - center) > np.abs(hi - center), lo, hi)
        radius = float(np.sqrt(((far - center) ** 2).sum(axis=1)).max())
        center_w = submap.to_world_frame(center.reshape(1, 3))[0]
        sphere = BoundingSphere(tuple(float(c) for c in center_w), radius)
    submap.bounding_sphere = sphere
    submap.sphere_stale = False
    return sphere


def _trilinear_setup(submap: Submap, points):
    p = submap.to_submap_frame(np.asarray(points, dtype=float).reshape(-1, 3))
    g = p / submap.voxel_size - 0.5
    gr = np.round(g)
    g = np.where(np.abs(g - gr) < 1e-9, gr, g)
    base = np.floor(g).astype(np.int64)
    frac = g - base
    return base, frac


_CORNERS = np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.int64)


def interpolate_batch(submap: Submap, points) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Trilinear SDF and weight at world points.

    Returns ``(sdf, weight, valid)``. A point is valid only if every voxel with a
    non-zero interpolation coefficient is allocated and observed.
    """
    base, frac = _trilinear_setup(submap, points)
    n = len(base)
    if n == 0:
        return np.zeros(0), np.zeros(0), np.ones(0, dtype=bool)
    # All 8 corners in one gather: coef and samples are (n, 8).
    f = np.where(_CORNERS[None] == 1, frac[:, None], 1.0 - frac[:, None])
    coef = f[:, :, 0] * f[:, :, 1] * f[:, :, 2]
    d, w, _, _, _ = submap.gather((base[:, None, :] + _CORNERS[None]).reshape(-1, 3))
    d = d.reshape(n, 8)
    w = w.reshape(n, 8)
    valid = np.all((coef <= 0.0) | (w > 0.0), axis=1)
    # Fixed corner order so scalar callers can reproduce the sums exactly.
    sdf = np.zeros(n)
    weight = np.zeros(n)
    for c in range(8):
        sdf += coef[:, c] * d[:, c]
        weight += coef[:, c] * w[:, c]
    sdf[~valid] = np.nan
    weight[~valid] = np.nan
    return sdf, weight, valid


def interpolate_sdf(submap: Submap, point) -> Optional[Tuple[float, float]]:
    sdf, weight, valid = interpolate_batch(submap, np.asarray(point, dtype=float).reshape(1, 3))
    if not valid[0]:
        return None
    return float(sdf[0]), float(weight[0])


def nearest_voxels(submap: Submap, points):
    """Channels of the voxel containing each world point (no interpolation)."""
    p = submap.to_submap_frame(np.asarray(points, dtype=float).reshape(-1, 3))
    return submap.gather(submap.global_voxel_index(p))


class SpatialIndex:
    """Uniform hash grid mapping world cells to the submaps whose sphere touches them."""

    def __init__(self, cell_size: float = 1.0):
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.cell_size = float(cell_size)
        self._cells: Dict[Tuple[int, int, int], Set[int]] = {}
        self._spheres: Dict[int, BoundingSphere] = {}
        self._cells_of: Dict[int, List[Tuple[int, int, int]]] = {}

    def __len__(self) -> int:
        return len(self._spheres)

    def __contains__(self, submap_id: int) -> bool:
        return submap_id in self._spheres

    def cells_overlapping(self, sphere: BoundingSphere) -> List[Tuple[int, int, int]]:
        c = np.asarray(sphere.center, dtype=float)
        r = sphere.radius
        s = self.cell_size
        lo = np.floor((c - r) / s).astype(int)
        hi = np.floor((c + r) / s).astype(int)
        rng = [np.arange(lo[i], hi[i] + 1) for i in range(3)]
        cells = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, 3)
        # Exact sphere/box test: distance from center to the cell box.
        box_lo = cells * s
        nearest = np.clip(c, box_lo, box_lo + s)
        d2 = ((nearest - c) ** 2).sum(axis=1)
        keep = d2 <= (r + 1e-9) ** 2
        return [tuple(int(v) for v in cell) for cell in cells[keep]]

    def insert(self, submap_id: int, sphere: BoundingSphere) -> None:
        if submap_id in self._spheres:
            self.remove(submap_id)
        cells = self.cells_overlapping(sphere)
        for cell in cells:
            self._cells.setdefault(cell, set()).add(submap_id)
        self._spheres[submap_id] = sphere
        self._cells_of[submap_id] = cells

    def remove(self, submap_id: int) -> None:
        for cell in self._cells_of.pop(submap_id, []):
            ids = self._cells.get(cell)
            if ids is not None:
                ids.discard(submap_id)
                if not ids:
                    del self._cells[cell]
        self._spheres.pop(submap_id, None)

    def cells_of(self, submap_id: int) -> List[Tuple[int, int, int]]:
        return list(self._cells_of.get(submap_id, []))

    def query_point(self, point) -> Set[int]:
        p = np.asarray(point, dtype=float)
        cell = tuple(int(v) for v in np.floor(p / self.cell_size))
        return {i for i in self._cells.get(cell, ()) if self._spheres[i].contains(p)}

    def query_sphere(self, probe: BoundingSphere) -> Set[int]:
        found: Set[int] = set()
        for cell in self.cells_overlapping(probe):
            found.update(self._cells.get(cell, ()))
        return {i for i in found if self._spheres[i].intersects(probe)}


class SubmapCollection:
    """All submaps of the map plus the spatial index over their bounding spheres."""

    def __init__(self, index_cell_size: float = 1.0, voxels_per_side: int = VOXELS_PER_SIDE):
        self.submaps: Dict[int, Submap] = {}
        self.spatial_index = SpatialIndex(index_cell_size)
        self.voxels_per_side = voxels_per_side
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.submaps)

    def __iter__(self) -> Iterator[Submap]:
        return iter([self.submaps[k] for k in sorted(self.submaps)])

    def __contains__(self, submap_id: int) -> bool:
        return submap_id in self.submaps

    def __getitem__(self, submap_id: int) -> Submap:
        return self.submaps[submap_id]

    def create_submap(self, panoptic_type, class_id: int, instance_id: int, voxel_size: float) -> Submap:
        submap = Submap(self._next_id, panoptic_type, class_id, instance_id, voxel_size, self.voxels_per_side)
        self._next_id += 1
        self.add(submap)
        return submap

    def add(self, submap: Submap) -> None:
        if submap.id in self.submaps:
            raise KeyError(f"submap {submap.id} already present")
        self.submaps[submap.id] = submap
        self._next_id = max(self._next_id, submap.id + 1)
        self.refresh(submap, force=True)

    def remove(self, submap_id: int) -> Submap:
        self.spatial_index.remove(submap_id)
        return self.submaps.pop(submap_id)

    def refresh(self, submap: Submap, force: bool = False) -> None:
        """Recompute a stale bounding sphere and re-index the submap."""
        if submap.sphere_stale or force:
            update_bounding_sphere(submap)
            self.spatial_index.insert(submap.id, submap.bounding_sphere)

    def refresh_all(self) -> None:
        for submap in self:
            self.refresh(submap)

    def active(self) -> List[Submap]:
        return [s for s in self if s.is_active]

    def inactive(self) -> List[Submap]:
        return [s for s in self if not s.is_active]

    def query_point(self, point) -> Set[int]:
        return self.spatial_index.query_point(point)

    def query_sphere(self, sphere: BoundingSphere) -> Set[int]:
        return self.spatial_index.query_sphere(sphere)


def spatial_index_query(collection: SubmapCollection, probe) -> Set[int]:
    """Ids of submaps whose bounding sphere intersects a point or sphere probe."""
    if isinstance(probe, BoundingSphere):
        return collection.query_sphere(probe)
    return collection.query_point(probe)


def bounding_sphere_of_points(points) -> BoundingSphere:
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(p) == 0:
        return BoundingSphere()
    c = p.mean(axis=0)
    r = float(np.sqrt(((p - c) ** 2).sum(axis=1)).max())
    return BoundingSphere(tuple(float(v) for v in c), r)


def block_corner_points(submap: Submap) -> np.ndarray:
    """All 8 corners of every allocated block, world frame."""
    if not submap.blocks:
        return np.zeros((0, 3))
    idx = np.array(list(submap.blocks.keys()), dtype=float)
    corners = (idx[:, None, :] + _CORNERS[None, :, :]) * submap.block_size
    return submap.to_world_frame(corners.reshape(-1, 3))
