"""Incremental per-block marching cubes.

Cells are spanned by 8 neighboring voxel centers; the cell whose minimum
corner is voxel ``(i, j, k)`` of a block belongs to that block and reads the
``+x/+y/+z`` neighbor blocks at the boundary. A cell is meshed only when all 8
corners are observed and, with the belonging gate on, at least one corner has
belonging probability above one half.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRIANGLE_TABLE
from .core_map import BlockIndex, Submap

_TRI = np.array(TRIANGLE_TABLE, dtype=np.int64)
_CORNER_OFF = np.array(CORNER_OFFSETS, dtype=np.int64)
_EDGE_A = _CORNER_OFF[[a for a, _ in EDGE_CORNERS]]
_EDGE_B = _CORNER_OFF[[b for _, b in EDGE_CORNERS]]
_EDGE_CA = np.array([a for a, _ in EDGE_CORNERS])
_EDGE_CB = np.array([b for _, b in EDGE_CORNERS])
_EDGE_START = np.minimum(_EDGE_A, _EDGE_B)
_EDGE_AXIS = np.argmax(np.abs(_EDGE_B - _EDGE_A), axis=1)

# Blocks meshed per vectorized batch; bounds peak memory.
_BATCH = 128


@dataclass
class BlockMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    weights: np.ndarray

    @classmethod
    def empty(cls) -> "BlockMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.int64), np.zeros(0))

    def __len__(self) -> int:
        return len(self.vertices)


@dataclass
class IsoSurfacePoints:
    points: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class IsoSurface:
    """Mesh cache of one submap."""

    block_meshes: Dict[BlockIndex, BlockMesh] = field(default_factory=dict)
    points: IsoSurfacePoints = field(
        default_factory=lambda: IsoSurfacePoints(np.zeros((0, 3)), np.zeros(0))
    )
    last_remeshed: Set[BlockIndex] = field(default_factory=set)
    belonging_gate: bool = True

    def mesh(self) -> BlockMesh:
        """All block meshes concatenated (no welding across blocks)."""
        verts, tris, weights = [], [], []
        offset = 0
        for key in sorted(self.block_meshes):
            m = self.block_meshes[key]
            verts.append(m.vertices)
            tris.append(m.triangles + offset)
            weights.append(m.weights)
            offset += len(m.vertices)
        if not verts:
            return BlockMesh.empty()
        return BlockMesh(np.concatenate(verts), np.concatenate(tris), np.concatenate(weights))


def _padded_channels(submap: Submap, block_indices: np.ndarray):
    v = submap.voxels_per_side
    n = len(block_indices)
    shape = (n, v + 1, v + 1, v + 1)
    dist = np.zeros(shape, np.float32)
    weight = np.zeros(shape, np.float32)
    belongs = np.zeros(shape, bool)
    for off in itertools.product((0, 1), repeat=3):
        slots = submap.slots_of(block_indices + np.array(off))
        sel = np.nonzero(slots >= 0)[0]
        if sel.size == 0:
            continue
        tgt = tuple(slice(v, v + 1) if o else slice(0, v) for o in off)
        src = (slice(None),) + tuple(slice(0, 1) if o else slice(0, v) for o in off)
        s = slots[sel]
        dist[(sel,) + tgt] = submap._distance[s][src]
        weight[(sel,) + tgt] = submap._weight[s][src]
        hits = submap._hits[s][src].astype(np.int16)
        total = submap._total[s][src].astype(np.int16)
        belongs[(sel,) + tgt] = 2 * hits > total
    return dist, weight, belongs


def _march(submap: Submap, block_indices: np.ndarray, belonging_gate: bool) -> Dict[BlockIndex, BlockMesh]:
    v = submap.voxels_per_side
    n = len(block_indices)
    dist, weight, belongs = _padded_channels(submap, block_indices)

    corner_d = np.empty((n, v, v, v, 8), np.float32)
    valid = np.ones((n, v, v, v), bool)
    any_belongs = np.zeros((n, v, v, v), bool)
    case = np.zeros((n, v, v, v), np.int64)
    for c, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        sl = (slice(None), slice(dx, dx + v), slice(dy, dy + v), slice(dz, dz + v))
        d = dist[sl]
        corner_d[..., c] = d
        valid &= weight[sl] > 0
        any_belongs |= belongs[sl]
        case |= (d < 0).astype(np.int64) << c
    if belonging_gate:
        valid &= any_belongs
    active = valid & (case != 0) & (case != 255)

    meshes = {tuple(int(c) for c in b): BlockMesh.empty() for b in block_indices}
    bk, ci, cj, ck = np.nonzero(active)
    if bk.size == 0:
        return meshes

    cases = case[bk, ci, cj, ck]
    tri_rows = _TRI[cases]
    used = tri_rows >= 0
    cell_of = np.repeat(np.arange(bk.size), used.sum(axis=1))
    edges = tri_rows[used]

    cell_pos = np.stack([ci, cj, ck], axis=1)[cell_of]
    start = cell_pos + _EDGE_START[edges]
    side = v + 1
    key = ((((bk[cell_of] * side + start[:, 0]) * side + start[:, 1]) * side + start[:, 2]) * 3
           + _EDGE_AXIS[edges])
    uniq, first, inverse = np.unique(key, return_index=True, return_inverse=True)

    # Interpolate each unique edge crossing once.
    ucell = cell_of[first]
    uedge = edges[first]
    ub, ui, uj, uk = bk[ucell], ci[ucell], cj[ucell], ck[ucell]
    da = corner_d[ub, ui, uj, uk, _EDGE_CA[uedge]].astype(np.float64)
    db = corner_d[ub, ui, uj, uk, _EDGE_CB[uedge]].astype(np.float64)
    t = da / (da - db)
    pa = np.stack([ui, uj, uk], axis=1) + _EDGE_A[uedge]
    pb = np.stack([ui, uj, uk], axis=1) + _EDGE_B[uedge]
    wa = weight[ub, pa[:, 0], pa[:, 1], pa[:, 2]].astype(np.float64)
    wb = weight[ub, pb[:, 0], pb[:, 1], pb[:, 2]].astype(np.float64)
    base = block_indices[ub] * v
    ga = base + pa + 0.5
    gb = base + pb + 0.5
    verts = (ga + t[:, None] * (gb - ga)) * submap.voxel_size
    verts = submap.to_world_frame(verts)
    vweights = wa + t * (wb - wa)

    tris = inverse.reshape(-1, 3)
    # Table winding puts normals toward the inside; flip to face positive SDF.
    tris = tris[:, [0, 2, 1]]
    tri_block = ub[tris[:, 0]]
    vert_block = ub

    vstarts = np.searchsorted(vert_block, np.arange(n + 1))
    order = np.argsort(tri_block, kind="stable")
    tris = tris[order]
    tri_block = tri_block[order]
    tstarts = np.searchsorted(tri_block, np.arange(n + 1))
    for k in np.unique(vert_block):
        v0, v1 = vstarts[k], vstarts[k + 1]
        t0, t1 = tstarts[k], tstarts[k + 1]
        key_k = tuple(int(c) for c in block_indices[k])
        meshes[key_k] = BlockMesh(verts[v0:v1], tris[t0:t1] - v0, vweights[v0:v1])
    return meshes


def extract_meshes(submap: Submap, block_indices: Sequence, belonging_gate: bool = True) -> Dict[BlockIndex, BlockMesh]:
    """Mesh several allocated blocks; clears their ``dirty_mesh`` flags."""
    keys = [tuple(int(c) for c in b) for b in block_indices]
    missing = [k for k in keys if k not in submap.blocks]
    if missing:
        raise KeyError(f"blocks not allocated: {missing[:3]}")
    out: Dict[BlockIndex, BlockMesh] = {}
    for i in range(0, len(keys), _BATCH):
        chunk = keys[i:i + _BATCH]
        out.update(_march(submap, np.array(chunk, dtype=np.int64).reshape(-1, 3), belonging_gate))
    for k in keys:
        submap.blocks[k].dirty_mesh = False
    return out


def extract_block_mesh(submap: Submap, block_index, belonging_gate: bool = True) -> BlockMesh:
    key = tuple(int(c) for c in block_index)
    mesh = extract_meshes(submap, [key], belonging_gate)[key]
    if submap.iso_surface is not None:
        submap.iso_surface.block_meshes[key] = mesh
        _rebuild_points(submap.iso_surface)
    return mesh


def _rebuild_points(iso: IsoSurface) -> None:
    keys = sorted(iso.block_meshes)
    if keys:
        pts = np.concatenate([iso.block_meshes[k].vertices for k in keys])
        w = np.concatenate([iso.block_meshes[k].weights for k in keys])
    else:
        pts, w = np.zeros((0, 3)), np.zeros(0)
    iso.points = IsoSurfacePoints(pts, w)


def blocks_to_remesh(submap: Submap) -> Set[BlockIndex]:
    """Dirty blocks plus allocated blocks whose boundary cells read a dirty block."""
    out: Set[BlockIndex] = set()
    for key, block in submap.blocks.items():
        if not block.dirty_mesh:
            continue
        out.add(key)
        for off in itertools.product((0, -1), repeat=3):
            nb = (key[0] + off[0], key[1] + off[1], key[2] + off[2])
            if nb in submap.blocks:
                out.add(nb)
    out.update(k for k in submap.remesh_pending if k in submap.blocks)
    return out


def update_iso_surface(submap: Submap, belonging_gate: bool = True) -> IsoSurfacePoints:
    """Re-mesh what changed since the last call and return the cached points."""
    iso = submap.iso_surface
    if iso is None or iso.belonging_gate != belonging_gate:
        iso = IsoSurface(belonging_gate=belonging_gate)
        submap.iso_surface = iso
        for block in submap.blocks.values():
            block.dirty_mesh = True
    if submap.is_free_space:
        # Free space is never rendered or compared as a reference surface.
        for block in submap.blocks.values():
            block.dirty_mesh = False
        iso.last_remeshed = set()
        return iso.points

    stale = [k for k in iso.block_meshes if k not in submap.blocks]
    todo = blocks_to_remesh(submap)
    submap.remesh_pending.clear()
    iso.last_remeshed = todo
    if not todo and not stale:
        return iso.points
    for k in stale:
        del iso.block_meshes[k]
    if todo:
        iso.block_meshes.update(extract_meshes(submap, sorted(todo), belonging_gate))
    _rebuild_points(iso)
    return iso.points


def full_mesh(submap: Submap, belonging_gate: bool = True) -> Dict[BlockIndex, BlockMesh]:
    """Mesh every block from scratch without touching the cache or flags."""
    keys = sorted(submap.blocks)
    flags = {k: submap.blocks[k].dirty_mesh for k in keys}
    try:
        return extract_meshes(submap, keys, belonging_gate)
    finally:
        for k, f in flags.items():
            submap.blocks[k].dirty_mesh = f


def submap_mesh(submap: Submap) -> BlockMesh:
    if submap.iso_surface is None:
        return BlockMesh.empty()
    return submap.iso_surface.mesh()
