"""Spatio-temporal point queries over a submap collection.

Precedence per point:

1. active submaps that observe the point; the finest voxel size wins (ties to
   the lower id). Inside a belonging surface gives ``occupied``, else ``free``.
2. inactive persistent object/background submaps; the smallest ``|sdf|`` wins.
   Inside gives ``persistent_occupied``; outside is kept as free evidence.
3. inactive persistent free space gives ``expected_free``, then the free
   evidence from (2), then inactive unobserved-state submaps as predictions.
4. ``unknown``.

Absent submaps are never consulted.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import math

import numpy as np

from .core_map import ChangeState, Submap, SubmapCollection, interpolate_batch, nearest_voxels


class OccupancyState(str, Enum):
    OCCUPIED = "occupied"
    FREE = "free"
    EXPECTED_OCCUPIED = "expected_occupied"
    EXPECTED_FREE = "expected_free"
    PERSISTENT_OCCUPIED = "persistent_occupied"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class QueryResult:
    state: OccupancyState = OccupancyState.UNKNOWN
    sdf: Optional[float] = None
    source_submap: Optional[int] = None
    source_voxel_size: Optional[float] = None


UNKNOWN = QueryResult()


def _observations(submap: Submap, points: np.ndarray):
    """Interpolated sdf, validity, and nearest-voxel belonging for many points."""
    sdf, _, valid = interpolate_batch(submap, points)
    inside = np.zeros(len(points), bool)
    if valid.any():
        _, _, hits, total, _ = nearest_voxels(submap, points[valid])
        inside[valid] = (sdf[valid] < 0) & (2 * hits > total)
    return sdf, valid, inside


_CORNER_OFFSETS = [(i, j, k) for i in (0, 1) for j in (0, 1) for k in (0, 1)]


def _observe_point(submap: Submap, point) -> Optional[Tuple[float, bool]]:
    """Scalar twin of :func:`_observations` for a single point.

    Mirrors the batch arithmetic step by step so both give identical results;
    plain floats avoid the per-call array overhead that dominates single lookups.
    """
    if submap.pose_is_identity:
        x, y, z = point
    else:
        x, y, z = (float(c) for c in submap.to_submap_frame(np.asarray(point, dtype=float).reshape(1, 3))[0])
    nu = submap.voxel_size
    v = submap.voxels_per_side
    base, frac = [], []
    for c in (x, y, z):
        g = c / nu - 0.5
        gr = round(g)
        if abs(g - gr) < 1e-9:
            g = float(gr)
        b = math.floor(g)
        base.append(b)
        frac.append(g - b)
    blocks = submap.blocks
    sdf = 0.0
    for off in _CORNER_OFFSETS:
        fx = frac[0] if off[0] else 1.0 - frac[0]
        fy = frac[1] if off[1] else 1.0 - frac[1]
        fz = frac[2] if off[2] else 1.0 - frac[2]
        coef = fx * fy * fz
        gi, gj, gk = base[0] + off[0], base[1] + off[1], base[2] + off[2]
        block = blocks.get((gi // v, gj // v, gk // v))
        if block is None:
            if coef > 0.0:
                return None
            continue
        li, lj, lk = gi % v, gj % v, gk % v
        w = float(block.weight[li, lj, lk])
        if coef > 0.0 and not w > 0.0:
            return None
        sdf += coef * float(block.distance[li, lj, lk])
    inside = False
    if sdf < 0:
        block = blocks.get((math.floor(x / nu) // v, math.floor(y / nu) // v, math.floor(z / nu) // v))
        if block is not None:
            li, lj, lk = math.floor(x / nu) % v, math.floor(y / nu) % v, math.floor(z / nu) % v
            inside = 2 * int(block.belong_hits[li, lj, lk]) > int(block.belong_total[li, lj, lk])
    return sdf, inside


def _result(state, submap: Submap, sdf: float) -> QueryResult:
    return QueryResult(OccupancyState(state), float(sdf), submap.id, submap.voxel_size)


def _consulted(submap: Submap) -> bool:
    return submap.is_active or submap.change_state is not ChangeState.ABSENT


def _tier(submap: Submap) -> int:
    if submap.is_active:
        return 1
    if submap.change_state is ChangeState.PERSISTENT:
        return 3 if submap.is_free_space else 2
    if submap.change_state is ChangeState.UNOBSERVED:
        return 4
    return 0


def _resolve(obs: List[Tuple[Submap, float, bool]]) -> QueryResult:
    """Apply the precedence rules to the observations of one point.

    ``obs`` holds ``(submap, sdf, inside)`` for every present submap observing it.
    """
    by_tier: Dict[int, List[Tuple[Submap, float, bool]]] = {1: [], 2: [], 3: [], 4: []}
    for item in obs:
        t = _tier(item[0])
        if t:
            by_tier[t].append(item)
    if by_tier[1]:
        s, d, inside = min(by_tier[1], key=lambda o: (o[0].voxel_size, o[0].id))
        return _result(OccupancyState.OCCUPIED if inside else OccupancyState.FREE, s, d)
    outside = None
    if by_tier[2]:
        s, d, inside = min(by_tier[2], key=lambda o: (abs(o[1]), o[0].id))
        if inside:
            return _result(OccupancyState.PERSISTENT_OCCUPIED, s, d)
        outside = (s, d)
    if by_tier[3]:
        s, d, _ = min(by_tier[3], key=lambda o: (abs(o[1]), o[0].id))
        return _result(OccupancyState.EXPECTED_FREE, s, d)
    if outside is not None:
        return _result(OccupancyState.EXPECTED_FREE, *outside)
    if by_tier[4]:
        s, d, inside = min(by_tier[4], key=lambda o: (abs(o[1]), o[0].id))
        return _result(OccupancyState.EXPECTED_OCCUPIED if inside else OccupancyState.EXPECTED_FREE, s, d)
    return UNKNOWN


def lookup(collection: SubmapCollection, point) -> QueryResult:
    """Classified occupancy of one world point with its source submap."""
    p = tuple(float(c) for c in np.asarray(point, dtype=float).reshape(3))
    obs = []
    for sid in sorted(collection.query_point(p)):
        submap = collection[sid]
        if not _consulted(submap):
            continue
        got = _observe_point(submap, p)
        if got is not None:
            obs.append((submap, got[0], got[1]))
    return _resolve(obs)


def lookup_batch(collection: SubmapCollection, points) -> List[QueryResult]:
    """Vectorized :func:`lookup` over an (n, 3) array."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    per_point: List[List[Tuple[Submap, float, bool]]] = [[] for _ in range(len(pts))]
    for submap in collection:
        if not _consulted(submap):
            continue
        c = np.asarray(submap.bounding_sphere.center)
        near = np.nonzero(((pts - c) ** 2).sum(axis=1) <= (submap.bounding_sphere.radius + 1e-9) ** 2)[0]
        if near.size == 0:
            continue
        sdf, valid, inside = _observations(submap, pts[near])
        for k in np.nonzero(valid)[0]:
            per_point[near[k]].append((submap, float(sdf[k]), bool(inside[k])))
    return [_resolve(o) for o in per_point]


def lookup_sdf(collection: SubmapCollection, point) -> Optional[Tuple[float, int]]:
    """Signed distance with the smallest magnitude over all present submaps."""
    p = np.asarray(point, dtype=float).reshape(1, 3)
    best = None
    for sid in sorted(collection.query_point(p[0])):
        submap = collection[sid]
        if not submap.is_present:
            continue
        sdf, _, valid = interpolate_batch(submap, p)
        if valid[0] and (best is None or abs(sdf[0]) < abs(best[0])):
            best = (float(sdf[0]), sid)
    return best

