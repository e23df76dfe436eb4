import copy

import numpy as np
import pytest

from multitsdf.core_map import Activity, ChangeState, PanopticType, SubmapCollection
from multitsdf.management import (
    ChangeConfig,
    PointClass,
    Verdict,
    classify_point,
    classify_points,
    combined_weight,
    compare_submaps,
    detect_changes,
    fuse_submaps,
    handle_deactivation,
)
from multitsdf.meshing import update_iso_surface

from conftest import add_all, fill_sdf, make_submap, sphere_sdf, sphere_submap

C = np.array([0.3, -0.2, 0.5])


def _chair(sid, nu=0.05, weight=100.0, radius=0.4, class_id=7, center=C):
    s = sphere_submap(sid, center, radius, nu=nu, class_id=class_id, weight=weight)
    update_iso_surface(s)
    return s


def _free_space(sid, sdf_fn, nu=0.05):
    s = make_submap(sid, PanopticType.FREE_SPACE, nu=nu, class_id=0)
    return fill_sdf(s, sdf_fn, C - 1.0, C + 1.0, weight=100.0)


def test_combined_weight_examples():
    assert combined_weight(100, 100, 100) == pytest.approx(1.0)
    assert combined_weight(25, 100, 100) == pytest.approx(0.5)
    assert combined_weight(400, 100, 100) == pytest.approx(1.0)
    np.testing.assert_allclose(combined_weight(np.array([0.0, 100.0]), np.array([50.0, 1.0])), [0.0, 0.1])


def test_classify_point_examples():
    assert classify_point(0.0, "object", 0.05) is PointClass.AGREE
    assert classify_point(-0.2, "object", 0.05) is PointClass.CONFLICT
    assert classify_point(0.2, "object", 0.05) is PointClass.NEUTRAL
    assert classify_point(-0.2, "background", 0.05) is PointClass.CONFLICT
    assert classify_point(0.2, "free_space", 0.05) is PointClass.CONFLICT
    assert classify_point(-0.2, "free_space", 0.05) is PointClass.NEUTRAL


def test_classify_boundaries_are_strict():
    assert classify_point(0.05, "object", 0.05) is PointClass.NEUTRAL
    assert classify_point(-0.05, "object", 0.05) is PointClass.NEUTRAL
    assert classify_points([0.0, -0.06, 0.06], "free_space", 0.05) == [
        PointClass.AGREE, PointClass.NEUTRAL, PointClass.CONFLICT,
    ]


def test_classify_inside_object_never_agrees_with_free_space():
    for sdf in np.linspace(-0.5, -0.051, 20):
        vs_object = classify_point(sdf, "object", 0.05)
        vs_free = classify_point(sdf, "free_space", 0.05)
        assert not (vs_object is PointClass.AGREE and vs_free is PointClass.AGREE)
        assert vs_object is PointClass.CONFLICT


def test_compare_identical_copy_matches():
    ref = _chair(0)
    other = copy.deepcopy(ref)
    other.id = 1
    n = len(ref.iso_surface.points)
    out = compare_submaps(ref, other)
    assert out.verdict is Verdict.MATCH
    assert out.matched_score == pytest.approx(n)
    assert out.conflict_score == 0.0


def test_compare_surface_inside_other_object_conflicts():
    ref = _chair(0)
    tol = ref.voxel_size
    # The other object is larger, so the reference surface lies 3 tolerances inside it.
    other = _chair(1, radius=0.4 + 3 * tol)
    out = compare_submaps(ref, other)
    assert out.verdict is Verdict.CONFLICT
    assert out.conflict_score >= 20


def test_compare_surface_in_free_space_conflicts():
    ref = _chair(0)
    free = _free_space(1, lambda p: np.full(len(p), 1.0))
    out = compare_submaps(ref, free)
    assert out.verdict is Verdict.CONFLICT


def test_compare_surface_behind_free_space_is_not_conflict():
    ref = _chair(0)
    # Free space ends at the reference surface: the surface agrees with it.
    free = _free_space(1, sphere_sdf(C, 0.4))
    out = compare_submaps(ref, free)
    assert out.verdict is Verdict.MATCH and out.conflict_score == 0.0


def test_compare_non_overlapping_is_none():
    ref = _chair(0)
    far = _chair(1, center=C + 20.0)
    assert compare_submaps(ref, far).verdict is Verdict.NONE


def test_compare_unobserved_points_contribute_nothing():
    ref = _chair(0)
    other = make_submap(1, nu=0.05, class_id=7)
    # Observed only on a slab through the sphere.
    fill_sdf(other, sphere_sdf(C, 0.4), C - 1.0, C + (1.0, 1.0, -0.3), weight=100.0)
    out = compare_submaps(ref, other)
    assert 0 < out.observed_points < len(ref.iso_surface.points)
    assert out.matched_score <= out.observed_points


def test_threshold_modes():
    assert ChangeConfig().threshold(100) == 20
    assert ChangeConfig().threshold(5000) == pytest.approx(100)
    assert ChangeConfig(threshold_mode="min").threshold(5000) == 20
    with pytest.raises(ValueError):
        ChangeConfig(threshold_mode="avg")
    with pytest.raises(ValueError):
        ChangeConfig(abs_threshold=0)


def test_tolerance_reference():
    a = make_submap(0, nu=0.02)
    b = make_submap(1, nu=0.05)
    assert ChangeConfig(tolerance_reference="reference").tolerance(a, b) == pytest.approx(0.02)
    assert ChangeConfig().tolerance(a, b) == pytest.approx(0.05)
    assert ChangeConfig(sdf_tolerance_factor=2.0).tolerance(b, a) == pytest.approx(0.10)


def _scenario():
    coll = SubmapCollection()
    chair = _chair(0)
    chair.activity = Activity.INACTIVE
    far = _chair(1, center=C + 20.0)
    far.activity = Activity.INACTIVE
    far.change_state = ChangeState.UNOBSERVED
    add_all(coll, chair, far)
    return coll, chair, far


def test_detect_absent_through_free_space():
    coll, chair, far = _scenario()
    fs = _free_space(5, lambda p: np.full(len(p), 1.0))
    coll.add(fs)
    changes = detect_changes(coll)
    assert changes == {chair.id: ChangeState.ABSENT}
    assert far.change_state is ChangeState.UNOBSERVED


def test_detect_persistent_when_reobserved():
    coll, chair, far = _scenario()
    chair.change_state = ChangeState.UNOBSERVED
    again = _chair(6)
    coll.add(again)
    assert detect_changes(coll) == {chair.id: ChangeState.PERSISTENT}
    assert far.change_state is ChangeState.UNOBSERVED


def test_detect_changes_idempotent():
    coll, chair, _ = _scenario()
    coll.add(_free_space(5, lambda p: np.full(len(p), 1.0)))
    detect_changes(coll)
    before = {s.id: s.change_state for s in coll}
    assert detect_changes(coll) == {}
    assert {s.id: s.change_state for s in coll} == before


def test_conflict_beats_match():
    coll, chair, _ = _scenario()
    chair.change_state = ChangeState.UNOBSERVED
    coll.add(_chair(6))
    coll.add(_free_space(7, lambda p: np.full(len(p), 1.0)))
    detect_changes(coll)
    assert chair.change_state is ChangeState.ABSENT


def test_fuse_with_copy():
    coll = SubmapCollection()
    a = _chair(0, weight=50.0)
    b = copy.deepcopy(a)
    b.id = 1
    add_all(coll, a, b)
    before = a.iso_surface.points.points.copy()
    d_before = {k: blk.distance.copy() for k, blk in a.blocks.items()}
    fused = fuse_submaps(coll, a, b)
    assert fused.id == 0 and 1 not in coll
    for k, blk in fused.blocks.items():
        np.testing.assert_allclose(blk.distance, d_before[k], atol=1e-6)
        np.testing.assert_allclose(blk.weight, 100.0)
        assert np.all(blk.belong_total == 20)
    after = fused.iso_surface.points.points
    assert len(after) == len(before)
    np.testing.assert_allclose(np.sort(after, axis=0), np.sort(before, axis=0), atol=fused.voxel_size / 10)
    assert fused.change_state is ChangeState.PERSISTENT


def test_fuse_weight_cap_and_counter_halving():
    coll = SubmapCollection()
    a = _chair(0, weight=900.0)
    for blk in a.blocks.values():
        blk.belong_hits[...] = 200
        blk.belong_total[...] = 200
    b = copy.deepcopy(a)
    b.id = 1
    add_all(coll, a, b)
    fused = fuse_submaps(coll, a, b)
    for blk in fused.blocks.values():
        assert blk.weight.max() <= 1000.0
        assert blk.belong_total.max() < 255
        np.testing.assert_array_equal(blk.belong_total, 200)


def test_fuse_keeps_finer_grid():
    coll = SubmapCollection()
    coarse = _chair(0, nu=0.10)
    fine = _chair(1, nu=0.05)
    add_all(coll, coarse, fine)
    fused = fuse_submaps(coll, coarse, fine)
    assert fused.voxel_size == pytest.approx(0.05)
    assert fused.id == 1 and 0 not in coll


def test_fuse_class_mismatch():
    coll = SubmapCollection()
    a = _chair(0)
    b = _chair(1, class_id=8)
    add_all(coll, a, b)
    with pytest.raises(ValueError):
        fuse_submaps(coll, a, b)


def test_handle_deactivation_fuses_matching_inactive():
    coll = SubmapCollection()
    old = _chair(0)
    old.activity = Activity.INACTIVE
    new = _chair(1, nu=0.05)
    other_class = _chair(2, class_id=9)
    other_class.activity = Activity.INACTIVE
    add_all(coll, old, new, other_class)
    survivor = handle_deactivation(coll, new)
    assert survivor.id in (0, 1)
    assert len({0, 1} & set(coll.submaps)) == 1
    assert 2 in coll
    assert not survivor.is_active and survivor.change_state is ChangeState.PERSISTENT


def test_handle_deactivation_without_match_keeps_submap():
    coll = SubmapCollection()
    new = _chair(1)
    coll.add(new)
    assert handle_deactivation(coll, new) is new
    assert new.activity is Activity.INACTIVE
