import numpy as np
import pytest

from multitsdf.core_map import Activity, ChangeState, PanopticType, SubmapCollection, interpolate_batch
from multitsdf.queries import OccupancyState, lookup, lookup_batch, lookup_sdf

from conftest import add_all, fill_sdf, make_submap, sphere_submap
from oracles import brute_force_lookup, brute_force_lookup_many, random_collection

C = np.array([0.3, 0.3, 0.3])


def _free_space(sid, value=0.3, nu=0.3):
    s = make_submap(sid, PanopticType.FREE_SPACE, nu=nu, class_id=0)
    return fill_sdf(s, lambda p: np.full(len(p), value), C - 1.5, C + 1.5, hits=0)


def test_empty_collection_unknown():
    r = lookup(SubmapCollection(), (1.0, 2.0, 3.0))
    assert r.state is OccupancyState.UNKNOWN
    assert r.sdf is None and r.source_submap is None


def test_finest_active_wins():
    coll = SubmapCollection()
    obj = sphere_submap(1, C, 0.4, nu=0.05)
    add_all(coll, _free_space(0), obj)
    r = lookup(coll, C + (0.3, 0.0, 0.0))
    assert r.state is OccupancyState.OCCUPIED
    assert r.source_submap == 1 and r.source_voxel_size == pytest.approx(0.05)
    assert r.sdf < 0


def test_active_free():
    coll = add_all(SubmapCollection(), _free_space(0))
    r = lookup(coll, C)
    assert r.state is OccupancyState.FREE and r.source_submap == 0


def test_negative_sdf_without_belonging_is_free():
    coll = add_all(SubmapCollection(), sphere_submap(1, C, 0.4, hits=2))
    assert lookup(coll, C).state is OccupancyState.FREE


def test_absent_only_is_unknown():
    obj = sphere_submap(1, C, 0.4)
    obj.activity = Activity.INACTIVE
    obj.change_state = ChangeState.ABSENT
    coll = add_all(SubmapCollection(), obj)
    assert lookup(coll, C + (0.3, 0, 0)).state is OccupancyState.UNKNOWN
    assert lookup_sdf(coll, C + (0.3, 0, 0)) is None


def test_persistent_inactive_tiers():
    obj = sphere_submap(1, C, 0.4)
    obj.activity = Activity.INACTIVE
    fs = _free_space(0)
    fs.activity = Activity.INACTIVE
    coll = add_all(SubmapCollection(), fs, obj)
    assert lookup(coll, C + (0.3, 0, 0)).state is OccupancyState.PERSISTENT_OCCUPIED
    r = lookup(coll, C + (0.45, 0, 0))
    assert r.state is OccupancyState.EXPECTED_FREE and r.source_submap == 0


def test_unobserved_state_is_expectation():
    obj = sphere_submap(1, C, 0.4)
    obj.activity = Activity.INACTIVE
    obj.change_state = ChangeState.UNOBSERVED
    coll = add_all(SubmapCollection(), obj)
    assert lookup(coll, C + (0.3, 0, 0)).state is OccupancyState.EXPECTED_OCCUPIED
    assert lookup(coll, C + (0.45, 0, 0)).state is OccupancyState.EXPECTED_FREE


def test_active_observation_beats_inactive_persistent():
    obj = sphere_submap(1, C, 0.4)
    obj.activity = Activity.INACTIVE
    coll = add_all(SubmapCollection(), _free_space(0), obj)
    r = lookup(coll, C + (0.3, 0, 0))
    assert r.state is OccupancyState.FREE and r.source_submap == 0


def test_lookup_sdf_examples():
    coll = SubmapCollection()
    c = np.array([0.33, 0.33, 0.33])
    obj = sphere_submap(1, c, 0.4, nu=0.02)
    coll.add(obj)
    # A voxel center 2 cm outside the sphere surface.
    p = c + (0.42, 0.0, 0.0)
    only = lookup_sdf(coll, p)
    assert only[1] == 1 and only[0] == pytest.approx(0.02, abs=1e-6)
    coll.add(_free_space(0, value=0.3))
    assert lookup_sdf(coll, p) == pytest.approx(only)
    assert lookup_sdf(coll, (50.0, 0.0, 0.0)) is None


@pytest.mark.parametrize("seed", range(4))
def test_lookup_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    coll = random_collection(rng)
    pts = rng.uniform(-2.5, 2.5, (2000, 3))
    batch = lookup_batch(coll, pts)
    expected = brute_force_lookup_many(coll, pts)
    for p, rb, exp in zip(pts, batch, expected):
        r = lookup(coll, p)
        assert (r.state.value, r.source_submap) == exp
        assert rb == r
    for p, exp in zip(pts[:200], expected):
        assert brute_force_lookup(coll, p) == exp


def test_absent_submap_never_sources_results():
    rng = np.random.default_rng(11)
    coll = random_collection(rng)
    pts = rng.uniform(-2.5, 2.5, (1000, 3))
    before = lookup_batch(coll, pts)
    victim = next(s for s in coll if s.panoptic_type is not PanopticType.FREE_SPACE)
    victim.activity = Activity.INACTIVE
    victim.change_state = ChangeState.ABSENT
    after = lookup_batch(coll, pts)
    _, _, seen = interpolate_batch(victim, pts)
    for b, a, s in zip(before, after, seen):
        assert a.source_submap != victim.id
        if not s:
            assert a == b


def test_lookup_deterministic():
    rng = np.random.default_rng(4)
    coll = random_collection(rng)
    pts = rng.uniform(-2.5, 2.5, (300, 3))
    assert lookup_batch(coll, pts) == lookup_batch(coll, pts)
