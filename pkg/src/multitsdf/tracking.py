"""Frame-to-map label tracking by rendered-mask IoU, and submap lifecycle."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Set, Tuple

import numpy as np

from .camera import CameraIntrinsics, Pose, frustum_intersects
from .core_map import Activity, ChangeState, PanopticType, Submap, SubmapCollection

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Segment:
    class_id: int
    panoptic_type: PanopticType

    def __post_init__(self):
        object.__setattr__(self, "panoptic_type", PanopticType(self.panoptic_type))


@dataclass
class SegmentationFrame:
    depth: np.ndarray
    instance_ids: np.ndarray
    segment_table: Dict[int, Segment]
    pose: Pose
    intrinsics: CameraIntrinsics
    frame_number: int = 0

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        self.instance_ids = np.asarray(self.instance_ids, dtype=np.uint16)
        if self.depth.shape != self.instance_ids.shape:
            raise ValueError("depth and instance id images differ in shape")
        missing = sorted(set(np.unique(self.instance_ids).tolist()) - {0} - set(self.segment_table))
        if missing:
            raise ValueError(f"instance ids missing from segment table: {missing}")


@dataclass
class TrackingConfig:
    iou_threshold: float = 0.1
    new_frames: int = 3
    active_frames: int = 5
    small_voxel_size: float = 0.02
    large_voxel_size: float = 0.05
    freespace_voxel_size: float = 0.30
    small_classes: Tuple[int, ...] = ()
    class_voxel_sizes: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.iou_threshold <= 1:
            raise ValueError("iou_threshold must be in (0, 1]")
        if self.new_frames < 1 or self.active_frames < 1:
            raise ValueError("frame thresholds must be positive")
        sizes = [self.small_voxel_size, self.large_voxel_size, self.freespace_voxel_size]
        sizes += list(self.class_voxel_sizes.values())
        if min(sizes) <= 0:
            raise ValueError("voxel sizes must be positive")
        self.small_classes = tuple(int(c) for c in self.small_classes)
        self.class_voxel_sizes = {int(k): float(v) for k, v in self.class_voxel_sizes.items()}


@dataclass
class RenderedMask:
    mask: np.ndarray
    depth: np.ndarray


@dataclass
class TrackingResult:
    matches: List[Tuple[int, int, float]] = field(default_factory=list)
    new_submaps: List[Tuple[int, int]] = field(default_factory=list)
    input_to_submap: Optional[np.ndarray] = None
    free_space_id: Optional[int] = None

    def tracked_submaps(self) -> Set[int]:
        ids = {s for _, s, _ in self.matches} | {s for _, s in self.new_submaps}
        if self.free_space_id is not None:
            ids.add(self.free_space_id)
        return ids


def voxel_size_for(class_id: int, panoptic_type, config: TrackingConfig) -> float:
    ptype = PanopticType(panoptic_type)
    if ptype is PanopticType.FREE_SPACE:
        return config.freespace_voxel_size
    if class_id in config.class_voxel_sizes:
        return config.class_voxel_sizes[class_id]
    if ptype is PanopticType.OBJECT and class_id in config.small_classes:
        return config.small_voxel_size
    return config.large_voxel_size


def patch_side(voxel_size: float, fx: float, z):
    """Pixel side of the square patch one iso-surface point covers at depth z."""
    return np.maximum(1, np.round(voxel_size * fx / np.asarray(z, dtype=float))).astype(np.int64)


def render_submap(submap: Submap, frame: SegmentationFrame) -> Optional[RenderedMask]:
    """Project the cached iso-surface of one submap into the frame."""
    intr = frame.intrinsics
    iso = submap.iso_surface
    if iso is None or len(iso.points) == 0:
        return None
    H, W = frame.depth.shape
    pc = frame.pose.inverse().transform(iso.points.points)
    z = pc[:, 2]
    ok = (z >= intr.min_range) & (z <= intr.max_range)
    zs = np.where(ok, z, 1.0)
    u = intr.fx * pc[:, 0] / zs + intr.cx
    v = intr.fy * pc[:, 1] / zs + intr.cy
    ok &= (u >= 0) & (u < W) & (v >= 0) & (v < H)
    col = np.where(ok, u, 0).astype(np.int64)
    row = np.where(ok, v, 0).astype(np.int64)
    meas = frame.depth[row, col]
    ok &= (meas > 0) & (np.abs(z - meas) <= submap.voxel_size)
    depth = np.full((H, W), np.inf)
    if not ok.any():
        return RenderedMask(np.zeros((H, W), bool), depth)
    u, v, z = u[ok], v[ok], z[ok]
    sides = patch_side(submap.voxel_size, intr.fx, z)
    for s in np.unique(sides):
        m = sides == s
        # Square patch of side s centered on the projected point.
        r0 = np.floor(v[m] - s / 2.0 + 0.5).astype(np.int64)
        c0 = np.floor(u[m] - s / 2.0 + 0.5).astype(np.int64)
        off = np.arange(s)
        rr = (r0[:, None, None] + off[None, :, None]).repeat(s, axis=2)
        cc = (c0[:, None, None] + off[None, None, :]).repeat(s, axis=1)
        zz = np.broadcast_to(z[m][:, None, None], rr.shape)
        inside = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
        np.minimum.at(depth, (rr[inside], cc[inside]), zz[inside])
    return RenderedMask(np.isfinite(depth), depth)


def render_submap_masks(collection: SubmapCollection, frame: SegmentationFrame) -> Dict[int, RenderedMask]:
    """Rendered masks of every active, non-free-space submap in view."""
    out: Dict[int, RenderedMask] = {}
    for submap in collection.active():
        if submap.is_free_space:
            continue
        if not frustum_intersects(submap.bounding_sphere, frame.pose, frame.intrinsics):
            continue
        rendered = render_submap(submap, frame)
        if rendered is not None:
            out[submap.id] = rendered
    return out


def compute_iou(mask_a, mask_b) -> float:
    a = np.asarray(mask_a, dtype=bool)
    b = np.asarray(mask_b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def segment_ious(frame: SegmentationFrame, rendered: Mapping[int, RenderedMask]) -> Dict[Tuple[int, int], float]:
    """IoU for every (instance id, submap id) pair with non-zero overlap."""
    ids = frame.instance_ids.astype(np.int64)
    n_ids = int(ids.max()) + 1 if ids.size else 1
    seg_area = np.bincount(ids.ravel(), minlength=n_ids)
    out: Dict[Tuple[int, int], float] = {}
    for sid, r in rendered.items():
        area = int(np.count_nonzero(r.mask))
        if area == 0:
            continue
        inter = np.bincount(ids[r.mask], minlength=n_ids)
        for inst in np.nonzero(inter)[0]:
            if inst == 0:
                continue
            union = seg_area[inst] + area - inter[inst]
            out[(int(inst), sid)] = float(inter[inst] / union)
    return out


def associate_segments(
    frame: SegmentationFrame,
    rendered: Mapping[int, RenderedMask],
    collection: SubmapCollection,
    config: TrackingConfig,
) -> Tuple[List[Tuple[int, int, float]], List[int]]:
    """Greedy one-to-one matching by descending IoU among same-class pairs.

    Returns ``(matches, unmatched instance ids)``; ties go to the lower submap id.
    """
    present = [int(i) for i in np.unique(frame.instance_ids) if i != 0]
    ious = segment_ious(frame, rendered)
    pairs = []
    for (inst, sid), iou in ious.items():
        seg = frame.segment_table[inst]
        sub = collection[sid]
        if sub.class_id != seg.class_id or sub.panoptic_type is not seg.panoptic_type:
            continue
        if iou < config.iou_threshold:
            continue
        pairs.append((-iou, sid, inst))
    pairs.sort()
    used_inst: Set[int] = set()
    used_sub: Set[int] = set()
    matches = []
    for neg_iou, sid, inst in pairs:
        if inst in used_inst or sid in used_sub:
            continue
        used_inst.add(inst)
        used_sub.add(sid)
        matches.append((inst, sid, -neg_iou))
    unmatched = [i for i in present if i not in used_inst]
    return matches, unmatched


def allocate_submap(
    collection: SubmapCollection,
    class_id: int,
    panoptic_type,
    config: TrackingConfig,
    instance_id: int = 0,
) -> Submap:
    nu = voxel_size_for(class_id, panoptic_type, config)
    submap = collection.create_submap(panoptic_type, class_id, instance_id, nu)
    submap.activity = Activity.ACTIVE
    submap.change_state = ChangeState.PERSISTENT
    submap.frames_tracked = 1
    submap.frames_since_detection = 0
    return submap


def track_frame(
    collection: SubmapCollection,
    frame: SegmentationFrame,
    config: TrackingConfig,
    free_space_id: Optional[int] = None,
) -> TrackingResult:
    """Render, associate and allocate; builds the per-pixel submap assignment."""
    rendered = render_submap_masks(collection, frame)
    matches, unmatched = associate_segments(frame, rendered, collection, config)
    result = TrackingResult(matches=matches, free_space_id=free_space_id)
    for inst in unmatched:
        seg = frame.segment_table[inst]
        sub = allocate_submap(collection, seg.class_id, seg.panoptic_type, config, instance_id=inst)
        result.new_submaps.append((inst, sub.id))
    lut = np.full(int(frame.instance_ids.max()) + 1, -1, np.int64)
    for inst, sid, _ in matches:
        lut[inst] = sid
    for inst, sid in result.new_submaps:
        lut[inst] = sid
    result.input_to_submap = lut[frame.instance_ids.astype(np.int64)]
    return result


def update_activity(
    collection: SubmapCollection,
    result: TrackingResult,
    config: TrackingConfig,
) -> Tuple[List[int], List[int]]:
    """Advance tracking counters; returns ``(deactivated ids, deleted ids)``."""
    matched = {sid for _, sid, _ in result.matches}
    new = {sid for _, sid in result.new_submaps}
    deactivated, deleted = [], []
    for submap in collection.active():
        if submap.is_free_space:
            continue
        if submap.id in new:
            continue
        if submap.id in matched:
            submap.frames_tracked += 1
            submap.frames_since_detection = 0
            continue
        submap.frames_since_detection += 1
        if submap.frames_since_detection >= config.active_frames:
            if submap.frames_tracked >= config.new_frames:
                submap.activity = Activity.INACTIVE
                deactivated.append(submap.id)
            else:
                collection.remove(submap.id)
                deleted.append(submap.id)
    return deactivated, deleted
