import numpy as np
import pytest

from multitsdf.camera import CameraIntrinsics, Pose, look_at
from multitsdf.core_map import Activity, ChangeState, PanopticType, SubmapCollection
from multitsdf.integrator import integrate_frame
from multitsdf.meshing import update_iso_surface
from multitsdf.simulator import SceneObject, Sphere, default_intrinsics, render_frame
from multitsdf.tracking import (
    RenderedMask,
    Segment,
    SegmentationFrame,
    TrackingConfig,
    TrackingResult,
    allocate_submap,
    associate_segments,
    compute_iou,
    patch_side,
    render_submap_masks,
    track_frame,
    update_activity,
    voxel_size_for,
)

from conftest import fill_sdf

INTR = CameraIntrinsics(100.0, 100.0, 40.0, 30.0, 80, 60)


def _wall_collection(class_id=3, nu=0.05):
    """A fronto-parallel plane at z = 2 in front of the identity camera."""
    coll = SubmapCollection()
    s = coll.create_submap(PanopticType.BACKGROUND, class_id, 1, nu)
    s.activity = Activity.ACTIVE
    fill_sdf(s, lambda p: 2.0 - p[:, 2], (-0.6, -0.5, 1.8), (0.6, 0.5, 2.2))
    update_iso_surface(s)
    coll.refresh(s)
    return coll, s


def _frame(depth, ids, table, pose=None):
    return SegmentationFrame(depth, ids, table, pose or Pose(), INTR)


def test_patch_side_example():
    assert patch_side(0.05, 320.0, 2.0) == 8
    assert patch_side(0.02, 100.0, 4.0) == 1


def test_render_stamps_consistent_points():
    coll, s = _wall_collection()
    frame = _frame(np.full((60, 80), 2.0), np.zeros((60, 80)), {})
    masks = render_submap_masks(coll, frame)
    m = masks[s.id]
    assert m.mask.sum() > 100
    assert np.all(np.abs(m.depth[m.mask] - 2.0) <= s.voxel_size)


def test_render_rejects_depth_mismatch():
    coll, s = _wall_collection()
    frame = _frame(np.full((60, 80), 2.0 + 3 * s.voxel_size), np.zeros((60, 80)), {})
    masks = render_submap_masks(coll, frame)
    assert s.id not in masks or not masks[s.id].mask.any()


def test_render_culls_outside_frustum():
    coll, s = _wall_collection()
    behind = look_at((0.0, 0.0, 0.0), (0.0, 0.0, -1.0))
    frame = _frame(np.full((60, 80), 2.0), np.zeros((60, 80)), {}, behind)
    assert render_submap_masks(coll, frame) == {}


def test_render_is_pure():
    coll, s = _wall_collection()
    frame = _frame(np.full((60, 80), 2.0), np.zeros((60, 80)), {})
    a = render_submap_masks(coll, frame)[s.id]
    b = render_submap_masks(coll, frame)[s.id]
    np.testing.assert_array_equal(a.mask, b.mask)
    np.testing.assert_array_equal(a.depth, b.depth)


def test_inactive_submaps_not_rendered():
    coll, s = _wall_collection()
    s.activity = Activity.INACTIVE
    frame = _frame(np.full((60, 80), 2.0), np.zeros((60, 80)), {})
    assert render_submap_masks(coll, frame) == {}


def test_iou_examples():
    a = np.zeros((20, 20), bool)
    a[:10, :10] = True
    assert compute_iou(a, a) == 1.0
    b = np.zeros_like(a)
    b[10:, 10:] = True
    assert compute_iou(a, b) == 0.0
    c = np.zeros_like(a)
    c[:10, 5:15] = True
    assert compute_iou(a, c) == pytest.approx(1 / 3)
    assert compute_iou(np.zeros((3, 3)), np.zeros((3, 3))) == 0.0


def test_iou_dimension_mismatch():
    with pytest.raises(ValueError):
        compute_iou(np.zeros((3, 3)), np.zeros((3, 4)))


def _assoc_setup(iou_cols, seg_class=3, sub_class=3):
    """One segment covering columns [0, 40) and one submap mask with `iou_cols` overlap."""
    coll = SubmapCollection()
    s = coll.create_submap(PanopticType.OBJECT, sub_class, 1, 0.05)
    s.activity = Activity.ACTIVE
    ids = np.zeros((60, 80), np.uint16)
    ids[:, :40] = 7
    mask = np.zeros((60, 80), bool)
    mask[:, 40 - iou_cols : 80 - iou_cols] = True
    frame = _frame(np.full((60, 80), 2.0), ids, {7: Segment(seg_class, "object")})
    return frame, {s.id: RenderedMask(mask, np.where(mask, 2.0, np.inf))}, coll, s


def test_associate_match():
    # Overlap of 30 columns over a union of 50 gives IoU 0.6.
    frame, rendered, coll, s = _assoc_setup(30)
    matches, unmatched = associate_segments(frame, rendered, coll, TrackingConfig())
    assert matches == [(7, s.id, pytest.approx(0.6))]
    assert unmatched == []


def test_associate_class_mismatch():
    frame, rendered, coll, _ = _assoc_setup(30, sub_class=4)
    matches, unmatched = associate_segments(frame, rendered, coll, TrackingConfig())
    assert matches == [] and unmatched == [7]


def test_associate_low_iou():
    # Overlap of 3 columns over 77 gives IoU below 0.1.
    frame, rendered, coll, _ = _assoc_setup(3)
    matches, unmatched = associate_segments(frame, rendered, coll, TrackingConfig())
    assert matches == [] and unmatched == [7]


def test_associate_greedy_and_tie_break():
    coll = SubmapCollection()
    subs = [coll.create_submap(PanopticType.OBJECT, 3, i, 0.05) for i in range(3)]
    ids = np.zeros((60, 80), np.uint16)
    ids[:, :40] = 1
    ids[:, 40:] = 2
    table = {1: Segment(3, "object"), 2: Segment(3, "object")}
    frame = _frame(np.full((60, 80), 2.0), ids, table)
    left = ids == 1
    right = ids == 2
    rendered = {
        subs[0].id: RenderedMask(left, np.full((60, 80), 2.0)),
        subs[1].id: RenderedMask(left, np.full((60, 80), 2.0)),
        subs[2].id: RenderedMask(right, np.full((60, 80), 2.0)),
    }
    matches, unmatched = associate_segments(frame, rendered, coll, TrackingConfig())
    assert sorted(matches) == [(1, subs[0].id, 1.0), (2, subs[2].id, 1.0)]
    assert unmatched == []


def test_allocate_voxel_sizes():
    cfg = TrackingConfig(small_voxel_size=0.03, large_voxel_size=0.10, small_classes=(21,))
    coll = SubmapCollection()
    cup = allocate_submap(coll, 21, "object", cfg)
    assert cup.voxel_size == pytest.approx(0.03) and cup.truncation == pytest.approx(0.06)
    wall = allocate_submap(coll, 1, "background", cfg)
    assert wall.voxel_size == pytest.approx(0.10) and wall.truncation == pytest.approx(0.20)
    free = allocate_submap(coll, 0, "free_space", TrackingConfig())
    assert free.voxel_size == pytest.approx(0.30)
    assert cup.is_active and cup.frames_tracked == 1
    assert cup.change_state is ChangeState.PERSISTENT


def test_class_table_overrides_buckets():
    cfg = TrackingConfig(small_classes=(5,), class_voxel_sizes={5: 0.04})
    assert voxel_size_for(5, "object", cfg) == pytest.approx(0.04)
    assert voxel_size_for(5, "background", TrackingConfig(small_classes=(5,))) == pytest.approx(0.05)


def test_config_defaults_and_validation():
    cfg = TrackingConfig()
    assert (cfg.iou_threshold, cfg.new_frames, cfg.active_frames) == (0.1, 3, 5)
    assert cfg.freespace_voxel_size == pytest.approx(0.30)
    with pytest.raises(ValueError):
        TrackingConfig(iou_threshold=0.0)
    with pytest.raises(ValueError):
        TrackingConfig(large_voxel_size=-1.0)


def _run_activity(coll, sid, tracked, missed, cfg=TrackingConfig()):
    out = ([], [])
    for _ in range(tracked - 1):
        d, r = update_activity(coll, TrackingResult(matches=[(1, sid, 1.0)]), cfg)
        out[0].extend(d)
        out[1].extend(r)
    for _ in range(missed):
        d, r = update_activity(coll, TrackingResult(), cfg)
        out[0].extend(d)
        out[1].extend(r)
    return out


def test_short_lived_submap_deleted():
    coll = SubmapCollection()
    s = allocate_submap(coll, 3, "object", TrackingConfig())
    deactivated, deleted = _run_activity(coll, s.id, tracked=2, missed=5)
    assert deleted == [s.id] and deactivated == []
    assert s.id not in coll


def test_long_lived_submap_deactivated():
    coll = SubmapCollection()
    s = allocate_submap(coll, 3, "object", TrackingConfig())
    deactivated, deleted = _run_activity(coll, s.id, tracked=10, missed=5)
    assert deactivated == [s.id] and deleted == []
    assert coll[s.id].activity is Activity.INACTIVE


def test_matched_submap_resets_counter():
    coll = SubmapCollection()
    s = allocate_submap(coll, 3, "object", TrackingConfig())
    _run_activity(coll, s.id, tracked=4, missed=4)
    assert s.frames_since_detection == 4
    update_activity(coll, TrackingResult(matches=[(1, s.id, 0.5)]), TrackingConfig())
    assert s.frames_since_detection == 0 and s.is_active


def test_free_space_exempt():
    coll = SubmapCollection()
    fs = allocate_submap(coll, 0, "free_space", TrackingConfig())
    _run_activity(coll, -1, tracked=1, missed=20)
    assert fs.is_active


def _scene_frames(n, seed):
    rng = np.random.default_rng(seed)
    intr = default_intrinsics(80, 60, 60.0)
    objs = [
        SceneObject(Sphere(0.3), Pose(np.eye(3), (0.0, 0.0, 0.0)), 1, 12),
        SceneObject(Sphere(0.25), Pose(np.eye(3), (0.9, 0.0, 0.0)), 2, 13),
        SceneObject(Sphere(0.2), Pose(np.eye(3), (-0.8, 0.3, 0.0)), 3, 12),
    ]
    classes = {o.instance_id: o.class_id for o in objs}
    frames = []
    for t in range(n):
        a = 0.3 * t + rng.normal(scale=0.05)
        pose = look_at((3.0 * np.cos(a), 3.0 * np.sin(a), 0.8), (0.0, 0.0, 0.0))
        depth, ids = render_frame(objs, pose, intr, rng)
        # Occasionally swap a class label to stress the class constraint.
        table = {i: Segment(classes[i] if rng.random() > 0.2 else 14, "object") for i in classes}
        frames.append(SegmentationFrame(depth, ids, table, pose, intr, t))
    return frames


@pytest.mark.parametrize("seed", [0, 1])
def test_tracking_invariants_over_sequence(seed):
    cfg = TrackingConfig()
    coll = SubmapCollection()
    for frame in _scene_frames(25, seed):
        result = track_frame(coll, frame, cfg)
        seen = [i for i, _, _ in result.matches] + [i for i, _ in result.new_submaps]
        assert len(seen) == len(set(seen))
        for inst, sid, iou in result.matches:
            assert iou >= cfg.iou_threshold
            assert coll[sid].class_id == frame.segment_table[inst].class_id
        integrate_frame(coll, frame, result)
        for sid in result.tracked_submaps():
            update_iso_surface(coll[sid])
        update_activity(coll, result, cfg)
        assert all(s.frames_since_detection < cfg.active_frames for s in coll.active())


def test_track_frame_deterministic():
    def run():
        coll = SubmapCollection()
        out = []
        for frame in _scene_frames(10, 3):
            result = track_frame(coll, frame, TrackingConfig())
            integrate_frame(coll, frame, result)
            for sid in result.tracked_submaps():
                update_iso_surface(coll[sid])
            update_activity(coll, result, TrackingConfig())
            out.append((result.matches, result.new_submaps))
        return out

    assert run() == run()


def test_frame_validation():
    with pytest.raises(ValueError):
        _frame(np.ones((60, 80)), np.ones((60, 80)), {})
    with pytest.raises(ValueError):
        _frame(np.ones((60, 80)), np.zeros((60, 81)), {})
