import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multitsdf.core_map import (
    Activity,
    BoundingSphere,
    ChangeState,
    PanopticType,
    Submap,
    SubmapCollection,
    TsdfVoxel,
    allocate_block,
    block_corner_points,
    block_index_of_key,
    block_key,
    global_to_voxel,
    interpolate_batch,
    interpolate_sdf,
    spatial_index_query,
    update_bounding_sphere,
    voxel_center,
)

from conftest import make_submap


def test_global_to_voxel_first_cell():
    s = Submap(0, "object", 1, 1, 1.0)
    assert global_to_voxel(s, (0.5, 0.5, 0.5)) == ((0, 0, 0), (0, 0, 0))


def test_global_to_voxel_block_boundary():
    s = Submap(0, "object", 1, 1, 1.0)
    assert global_to_voxel(s, (16.5, 0.5, 0.5)) == ((1, 0, 0), (0, 0, 0))


def test_global_to_voxel_negative_coordinates():
    s = Submap(0, "object", 1, 1, 0.05)
    assert global_to_voxel(s, (-0.01, 0.0, 0.0)) == ((-1, 0, 0), (15, 0, 0))


@settings(max_examples=200, deadline=None)
@given(st.tuples(*[st.floats(-50, 50, allow_nan=False)] * 3), st.sampled_from([0.02, 0.05, 0.1, 0.3]))
def test_voxel_center_round_trip(p, nu):
    s = Submap(0, "object", 1, 1, nu)
    b, v = global_to_voxel(s, p)
    c = voxel_center(s, b, v)
    assert np.linalg.norm(c - np.asarray(p)) <= nu / 2 * np.sqrt(3) + 1e-9
    assert all(0 <= i < 16 for i in v)


def test_voxel_center_formula():
    s = Submap(0, "object", 1, 1, 0.1)
    np.testing.assert_allclose(voxel_center(s, (1, -1, 0), (2, 3, 4)), [(16 + 2.5) * 0.1, (-16 + 3.5) * 0.1, 0.45])


def test_allocate_block_idempotent_and_zeroed():
    s = Submap(0, "object", 1, 1, 0.05)
    a = allocate_block(s, (0, 0, 0))
    b = allocate_block(s, (0, 0, 0))
    assert a is b
    assert s.num_blocks == 1
    assert a.dirty_mesh
    assert np.all(a.weight == 0) and np.all(a.distance == 0)
    assert np.all(a.belong_hits == 0) and np.all(a.belong_total == 0)
    assert s.sphere_stale
    allocate_block(s, (3, 0, 0))
    assert s.num_blocks == 2


def test_block_geometry():
    s = Submap(0, "object", 1, 1, 0.05)
    blk = s.allocate_block((0, 0, 0))
    assert blk.distance.size == 16 ** 3
    assert s.block_size == pytest.approx(0.8)
    assert s.truncation == pytest.approx(0.1)


def test_block_voxel_accessors():
    s = Submap(0, "object", 1, 1, 0.05)
    blk = s.allocate_block((0, 0, 0))
    blk.set_voxel((1, 2, 3), TsdfVoxel(0.03, 5.0, 2, 4))
    v = blk.voxel((1, 2, 3))
    assert v.distance == pytest.approx(0.03)
    assert (v.weight, v.belong_hits, v.belong_total) == (5.0, 2, 4)


def test_remove_block_keeps_other_data():
    s = Submap(0, "object", 1, 1, 0.05)
    for i in range(5):
        s.allocate_block((i, 0, 0)).distance[...] = i
    s.remove_block((1, 0, 0))
    assert (1, 0, 0) not in s.blocks
    for i in (0, 2, 3, 4):
        assert np.all(s.blocks[(i, 0, 0)].distance == i)
    d, _, _, _, ok = s.gather(np.array([[64, 0, 0], [16, 0, 0]]))
    assert ok.tolist() == [True, False]
    assert d[0] == 4


def test_block_key_round_trip():
    idx = np.array([[0, 0, 0], [-5, 7, -1000], [1000, -1, 3]])
    np.testing.assert_array_equal(block_index_of_key(block_key(idx)), idx)


def test_bounding_sphere_empty():
    s = Submap(0, "object", 1, 1, 0.1)
    sphere = update_bounding_sphere(s)
    assert sphere.center == (0.0, 0.0, 0.0) and sphere.radius == 0.0


def test_bounding_sphere_single_block():
    s = Submap(0, "object", 1, 1, 0.1)
    s.allocate_block((0, 0, 0))
    sphere = update_bounding_sphere(s)
    np.testing.assert_allclose(sphere.center, (0.8, 0.8, 0.8))
    assert sphere.radius == pytest.approx(np.sqrt(3) * 0.8)


def test_bounding_sphere_two_blocks():
    s = Submap(0, "object", 1, 1, 0.1)
    s.allocate_blocks([(0, 0, 0), (1, 0, 0)])
    sphere = update_bounding_sphere(s)
    np.testing.assert_allclose(sphere.center, (1.6, 0.8, 0.8))
    assert sphere.radius == pytest.approx(np.sqrt(1.6 ** 2 + 0.8 ** 2 + 0.8 ** 2))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(*[st.integers(-6, 6)] * 3), min_size=1, max_size=25))
def test_bounding_sphere_contains_all_corners(blocks):
    s = Submap(0, "object", 1, 1, 0.07)
    s.allocate_blocks(blocks)
    sphere = update_bounding_sphere(s)
    d = np.linalg.norm(block_corner_points(s) - np.asarray(sphere.center), axis=1)
    assert np.all(d <= sphere.radius + 1e-9)


def _constant_block(s, value, weight=1.0):
    blk = s.allocate_block((0, 0, 0))
    blk.distance[...] = value
    blk.weight[...] = weight
    return blk


def test_interpolate_at_voxel_center_returns_sample():
    s = Submap(0, "object", 1, 1, 0.05)
    blk = _constant_block(s, 0.01, 10.0)
    blk.distance[4, 4, 4] = 0.03
    sdf, w = interpolate_sdf(s, voxel_center(s, (0, 0, 0), (4, 4, 4)))
    assert sdf == pytest.approx(0.03)
    assert w == pytest.approx(10.0)


def test_interpolate_midway_between_opposite_samples():
    s = Submap(0, "object", 1, 1, 0.05)
    blk = _constant_block(s, 0.0, 3.0)
    blk.distance[4, 4, 4] = -0.02
    blk.distance[5, 4, 4] = 0.02
    p = (voxel_center(s, (0, 0, 0), (4, 4, 4)) + voxel_center(s, (0, 0, 0), (5, 4, 4))) / 2
    sdf, w = interpolate_sdf(s, p)
    assert sdf == pytest.approx(0.0, abs=1e-12)
    assert w == pytest.approx(3.0)


def test_interpolate_unobserved_neighbor_is_empty():
    s = Submap(0, "object", 1, 1, 0.05)
    blk = _constant_block(s, 0.0)
    blk.weight[5, 5, 5] = 0.0
    p = voxel_center(s, (0, 0, 0), (4, 4, 4)) + 0.01
    assert interpolate_sdf(s, p) is None


def test_interpolate_matches_hand_trilinear(rng):
    s = Submap(0, "object", 1, 1, 0.1)
    blk = _constant_block(s, 0.0)
    blk.distance[...] = rng.uniform(-0.2, 0.2, blk.distance.shape)
    blk.weight[...] = rng.uniform(1, 5, blk.weight.shape)
    base = np.array([3, 6, 2])
    f = np.array([0.25, 0.6, 0.9])
    p = (base + 0.5 + f) * 0.1
    exp_d = exp_w = 0.0
    for c in itertools.product((0, 1), repeat=3):
        coef = np.prod([f[i] if c[i] else 1 - f[i] for i in range(3)])
        i, j, k = base + c
        exp_d += coef * blk.distance[i, j, k]
        exp_w += coef * blk.weight[i, j, k]
    sdf, w = interpolate_sdf(s, p)
    assert sdf == pytest.approx(exp_d, abs=1e-6)
    assert w == pytest.approx(exp_w, rel=1e-6)


def test_interpolate_batch_flags_unallocated():
    s = Submap(0, "object", 1, 1, 0.05)
    _constant_block(s, 0.02)
    sdf, w, valid = interpolate_batch(s, [[0.4, 0.4, 0.4], [5.0, 5.0, 5.0]])
    assert valid.tolist() == [True, False]
    assert sdf[0] == pytest.approx(0.02)
    assert np.isnan(sdf[1])


def test_submap_pose_transform():
    s = Submap(0, "object", 1, 1, 0.1)
    s.pose = np.eye(4)
    s.pose[:3, 3] = (1.0, 2.0, 3.0)
    np.testing.assert_allclose(s.to_submap_frame([[1.0, 2.0, 3.0]]), [[0, 0, 0]])
    b, v = global_to_voxel(s, (1.05, 2.05, 3.05))
    assert b == (0, 0, 0) and v == (0, 0, 0)


def test_is_present_states():
    s = Submap(0, "object", 1, 1, 0.1)
    assert s.is_present
    s.activity = Activity.INACTIVE
    for state, present in [(ChangeState.PERSISTENT, True), (ChangeState.UNOBSERVED, False), (ChangeState.ABSENT, False)]:
        s.change_state = state
        assert s.is_present is present


def test_invalid_voxel_size():
    with pytest.raises(ValueError):
        Submap(0, "object", 1, 1, 0.0)


def test_query_far_probe_empty():
    coll = SubmapCollection()
    s = coll.create_submap(PanopticType.OBJECT, 1, 1, 0.1)
    s.allocate_block((0, 0, 0))
    coll.refresh(s)
    assert spatial_index_query(coll, (50.0, 50.0, 50.0)) == set()
    assert spatial_index_query(coll, (0.8, 0.8, 0.8)) == {s.id}


def _random_collection(rng, n):
    coll = SubmapCollection(index_cell_size=1.0)
    for _ in range(n):
        s = coll.create_submap(PanopticType.OBJECT, 1, 1, float(rng.choice([0.02, 0.05, 0.1])))
        origin = rng.integers(-8, 8, 3)
        for _ in range(int(rng.integers(1, 4))):
            s.allocate_block(origin + rng.integers(-1, 2, 3))
        coll.refresh(s)
    return coll


def test_spatial_index_matches_brute_force(rng):
    coll = _random_collection(rng, 100)
    spheres = {s.id: s.bounding_sphere for s in coll}
    for _ in range(1000):
        if rng.random() < 0.5:
            p = rng.uniform(-10, 10, 3)
            expect = {i for i, sp in spheres.items() if sp.contains(p)}
            assert spatial_index_query(coll, p) == expect
        else:
            probe = BoundingSphere(tuple(rng.uniform(-10, 10, 3)), float(rng.uniform(0, 2)))
            expect = {i for i, sp in spheres.items() if sp.intersects(probe)}
            assert spatial_index_query(coll, probe) == expect


def test_spatial_index_cells_consistent(rng):
    coll = _random_collection(rng, 30)
    index = coll.spatial_index
    for s in coll:
        cells = set(index.cells_of(s.id))
        assert cells == set(index.cells_overlapping(s.bounding_sphere))
        for cell in cells:
            assert s.id in index._cells[cell]
    victim = next(iter(coll)).id
    coll.remove(victim)
    assert all(victim not in ids for ids in index._cells.values())


def test_collection_refresh_after_growth():
    coll = SubmapCollection()
    s = coll.create_submap(PanopticType.BACKGROUND, 2, 2, 0.1)
    s.allocate_block((0, 0, 0))
    coll.refresh(s)
    s.allocate_block((5, 0, 0))
    coll.refresh(s)
    assert spatial_index_query(coll, (8.5, 0.8, 0.8)) == {s.id}


def test_collection_rejects_duplicate_ids():
    coll = SubmapCollection()
    coll.add(make_submap(3))
    with pytest.raises(KeyError):
        coll.add(make_submap(3))
    assert coll.create_submap("object", 1, 1, 0.05).id == 4
