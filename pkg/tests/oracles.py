"""Brute-force reference implementations used by the query tests."""

import numpy as np

from multitsdf.core_map import (
    Activity,
    ChangeState,
    PanopticType,
    SubmapCollection,
    global_to_voxel,
    interpolate_batch,
    interpolate_sdf,
    nearest_voxels,
)

from conftest import fill_sdf, make_submap, sphere_sdf


def brute_force_lookup(collection, point):
    """Scan every submap and apply the query precedence rules one by one.

    Returns ``(state, source id)`` with ``("unknown", None)`` when nothing applies.
    """
    entries = []
    for s in collection.submaps.values():
        if not s.is_active and s.change_state is ChangeState.ABSENT:
            continue
        got = interpolate_sdf(s, point)
        if got is None:
            continue
        sdf = got[0]
        b, v = global_to_voxel(s, point)
        vox = s.blocks[b].voxel(v)
        entries.append((s, sdf, sdf < 0 and vox.belong_hits * 2 > vox.belong_total))
    return resolve_entries(entries)


def brute_force_lookup_many(collection, points):
    """Same as :func:`brute_force_lookup` but samples each submap once for all points."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    per_point = [[] for _ in range(len(pts))]
    for s in collection.submaps.values():
        if not s.is_active and s.change_state is ChangeState.ABSENT:
            continue
        sdf, _, valid = interpolate_batch(s, pts)
        _, _, hits, total, _ = nearest_voxels(s, pts)
        for i in np.nonzero(valid)[0]:
            per_point[i].append((s, float(sdf[i]), bool(sdf[i] < 0 and hits[i] * 2 > total[i])))
    return [resolve_entries(e) for e in per_point]


def resolve_entries(entries):
    """Precedence over ``(submap, sdf, inside)`` observations of one point."""
    active, persistent, free_persistent, unobserved = [], [], [], []
    for entry in entries:
        s = entry[0]
        if s.is_active:
            active.append(entry)
        elif s.change_state is ChangeState.PERSISTENT:
            (free_persistent if s.is_free_space else persistent).append(entry)
        else:
            unobserved.append(entry)
    if active:
        s, _, inside = min(active, key=lambda e: (e[0].voxel_size, e[0].id))
        return ("occupied" if inside else "free"), s.id
    nearest = None
    if persistent:
        nearest, _, inside = min(persistent, key=lambda e: (abs(e[1]), e[0].id))
        if inside:
            return "persistent_occupied", nearest.id
    if free_persistent:
        s, _, _ = min(free_persistent, key=lambda e: (abs(e[1]), e[0].id))
        return "expected_free", s.id
    if nearest is not None:
        return "expected_free", nearest.id
    if unobserved:
        s, _, inside = min(unobserved, key=lambda e: (abs(e[1]), e[0].id))
        return ("expected_occupied" if inside else "expected_free"), s.id
    return "unknown", None


def random_collection(rng, n_submaps=12, extent=3.0):
    """Overlapping spheres of mixed type, resolution, activity and change state."""
    coll = SubmapCollection(index_cell_size=1.0)
    for sid in range(n_submaps):
        ptype = [PanopticType.OBJECT, PanopticType.BACKGROUND, PanopticType.FREE_SPACE][int(rng.integers(3))]
        nu = float(rng.choice([0.05, 0.1, 0.2]))
        s = make_submap(sid, ptype, nu=nu, class_id=int(rng.integers(1, 4)))
        c = rng.uniform(-extent / 2, extent / 2, 3)
        r = float(rng.uniform(0.3, 1.0))
        if ptype is PanopticType.FREE_SPACE:
            fn = lambda p, c=c, r=r: r - np.linalg.norm(p - c, axis=1)
        else:
            fn = sphere_sdf(c, r)
        hits = int(rng.integers(0, 11))
        fill_sdf(s, fn, c - r - 2 * nu, c + r + 2 * nu, weight=float(rng.uniform(1, 100)), hits=hits, total=10)
        # Knock out random voxels so partial observation is exercised.
        for blk in s.blocks.values():
            blk.weight[rng.random(blk.weight.shape) < 0.05] = 0.0
        if rng.random() < 0.4:
            s.activity = Activity.INACTIVE
            s.change_state = [ChangeState.PERSISTENT, ChangeState.UNOBSERVED, ChangeState.ABSENT][int(rng.integers(3))]
        coll.add(s)
    return coll
