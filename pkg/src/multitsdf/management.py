"""Object-level change detection and fusion of matching submaps."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional

import numpy as np

from .core_map import (
    Activity,
    ChangeState,
    PanopticType,
    Submap,
    SubmapCollection,
    interpolate_batch,
)
from .integrator import IntegratorConfig, update_tsdf
from .meshing import update_iso_surface

log = logging.getLogger(__name__)


class Verdict(str, Enum):
    MATCH = "match"
    CONFLICT = "conflict"
    NONE = "none"


class PointClass(str, Enum):
    AGREE = "agree"
    CONFLICT = "conflict"
    NEUTRAL = "neutral"


@dataclass
class ChangeConfig:
    sdf_tolerance_factor: float = 1.0
    tolerance_reference: str = "coarser"
    max_weight: float = 100.0
    abs_threshold: float = 20.0
    rel_threshold: float = 0.02
    threshold_mode: str = "max"
    detection_period: int = 10

    def __post_init__(self):
        if min(self.sdf_tolerance_factor, self.max_weight, self.abs_threshold, self.rel_threshold) <= 0:
            raise ValueError("change detection parameters must be positive")
        if self.threshold_mode not in ("max", "min"):
            raise ValueError("threshold_mode must be 'max' or 'min'")
        if self.tolerance_reference not in ("reference", "coarser"):
            raise ValueError("tolerance_reference must be 'reference' or 'coarser'")
        if self.detection_period < 1:
            raise ValueError("detection_period must be >= 1")

    def tolerance(self, reference: Submap, other: Submap) -> float:
        nu = reference.voxel_size
        if self.tolerance_reference == "coarser":
            nu = max(nu, other.voxel_size)
        return self.sdf_tolerance_factor * nu

    def threshold(self, n_points: int) -> float:
        rel = self.rel_threshold * n_points
        return max(self.abs_threshold, rel) if self.threshold_mode == "max" else min(self.abs_threshold, rel)


@dataclass
class ComparisonOutcome:
    verdict: Verdict
    matched_score: float = 0.0
    conflict_score: float = 0.0
    observed_points: int = 0


def combined_weight(w, w_ref, max_weight: float = 100.0):
    """Geometric mean of both weights, each normalized and clamped to 1."""
    a = np.minimum(np.asarray(w, dtype=float) / max_weight, 1.0)
    b = np.minimum(np.asarray(w_ref, dtype=float) / max_weight, 1.0)
    out = np.sqrt(a * b)
    return float(out) if out.ndim == 0 else out


_AGREE, _CONFLICT, _NEUTRAL = 0, 1, 2
_CODES = (PointClass.AGREE, PointClass.CONFLICT, PointClass.NEUTRAL)


def _classify_codes(sdf, other_panoptic_type, tolerance: float) -> np.ndarray:
    s = np.asarray(sdf, dtype=float)
    if PanopticType(other_panoptic_type) is PanopticType.FREE_SPACE:
        conflict = s > tolerance
    else:
        conflict = s < -tolerance
    out = np.full(s.shape, _NEUTRAL, np.int8)
    out[conflict] = _CONFLICT
    out[np.abs(s) < tolerance] = _AGREE
    return out


def classify_points(sdf, other_panoptic_type, tolerance: float) -> list:
    """Classify many interpolated distances against a map of the given type."""
    return [_CODES[c] for c in _classify_codes(sdf, other_panoptic_type, tolerance).ravel()]


def classify_point(sdf: float, other_panoptic_type, tolerance: float) -> PointClass:
    return _CODES[_classify_codes(np.array([sdf]), other_panoptic_type, tolerance)[0]]


def compare_submaps(reference: Submap, other: Submap, config: Optional[ChangeConfig] = None) -> ComparisonOutcome:
    """Score the reference iso-surface against the other submap's TSDF."""
    config = config or ChangeConfig()
    iso = reference.iso_surface
    if iso is None or len(iso.points) == 0:
        return ComparisonOutcome(Verdict.NONE)
    if not reference.bounding_sphere.intersects(other.bounding_sphere):
        return ComparisonOutcome(Verdict.NONE)
    pts = iso.points.points
    sdf, w, valid = interpolate_batch(other, pts)
    if not valid.any():
        return ComparisonOutcome(Verdict.NONE)
    wr = iso.points.weights[valid]
    ws = combined_weight(w[valid], wr, config.max_weight)
    cls = _classify_codes(sdf[valid], other.panoptic_type, config.tolerance(reference, other))
    matched = float(ws[cls == _AGREE].sum())
    conflict = float(ws[cls == _CONFLICT].sum())
    theta = config.threshold(len(pts))
    if conflict >= theta:
        verdict = Verdict.CONFLICT
    elif matched >= theta:
        verdict = Verdict.MATCH
    else:
        verdict = Verdict.NONE
    return ComparisonOutcome(verdict, matched, conflict, int(valid.sum()))


def detect_changes(collection: SubmapCollection, config: Optional[ChangeConfig] = None) -> Dict[int, ChangeState]:
    """Re-evaluate the change state of every inactive submap overlapping active ones.

    Returns the new state of each submap whose state changed.
    """
    config = config or ChangeConfig()
    active = {s.id: s for s in collection.active()}
    for s in active.values():
        update_iso_surface(s)
    changes: Dict[int, ChangeState] = {}
    for ref in collection.inactive():
        if ref.is_free_space:
            continue
        overlapping = sorted(i for i in collection.query_sphere(ref.bounding_sphere) if i in active)
        if not overlapping:
            continue
        update_iso_surface(ref)
        verdicts = [compare_submaps(ref, active[i], config).verdict for i in overlapping]
        if Verdict.CONFLICT in verdicts:
            new_state = ChangeState.ABSENT
        elif Verdict.MATCH in verdicts:
            new_state = ChangeState.PERSISTENT
        else:
            continue
        if new_state is not ref.change_state:
            changes[ref.id] = new_state
            ref.change_state = new_state
    return changes


def fuse_submaps(
    collection: SubmapCollection,
    target: Submap,
    source: Submap,
    integrator_config: Optional[IntegratorConfig] = None,
) -> Submap:
    """Merge two same-class submaps into the finer one and drop the other.

    The finer grid (ties: more total weight) survives. Every observed voxel of
    the discarded submap is deposited into the survivor's voxel whose center it
    contains, using the regular TSDF fusion rule; belonging counters are summed.
    """
    if target.class_id != source.class_id or target.panoptic_type is not source.panoptic_type:
        raise ValueError(
            f"cannot fuse submaps of different classes ({target.class_id}/{target.panoptic_type.value} "
            f"vs {source.class_id}/{source.panoptic_type.value})"
        )
    cfg = integrator_config or IntegratorConfig()
    keep, drop = target, source
    if (source.voxel_size, -source.total_weight(), source.id) < (target.voxel_size, -target.total_weight(), target.id):
        keep, drop = source, target

    v = keep.voxels_per_side
    r = np.arange(v)
    local = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    src_keys = np.array(list(drop.blocks.keys()), dtype=np.int64).reshape(-1, 3)
    if len(src_keys):
        lo = keep.to_submap_frame(drop.to_world_frame(src_keys * drop.block_size))
        hi = keep.to_submap_frame(drop.to_world_frame((src_keys + 1) * drop.block_size))
        lo_b = np.floor(np.minimum(lo, hi) / keep.block_size).astype(np.int64)
        hi_b = np.floor((np.maximum(lo, hi) - 1e-9) / keep.block_size).astype(np.int64)
        cand = set()
        for a, b in zip(lo_b, hi_b):
            for x in range(a[0], b[0] + 1):
                for y in range(a[1], b[1] + 1):
                    for z in range(a[2], b[2] + 1):
                        cand.add((x, y, z))
        saturation = cfg.belonging_saturation
        for key in sorted(cand):
            centers = (np.asarray(key) * v + local + 0.5) * keep.voxel_size
            world = keep.to_world_frame(centers)
            g = drop.global_voxel_index(drop.to_submap_frame(world))
            d_s, w_s, h_s, t_s, ok = drop.gather(g)
            ok &= w_s > 0
            if not ok.any():
                continue
            block = keep.allocate_block(key)
            d_t = block.distance.reshape(-1)
            w_t = block.weight.reshape(-1)
            h_t = block.belong_hits.reshape(-1)
            t_t = block.belong_total.reshape(-1)
            d_new, w_new = update_tsdf(d_t[ok], w_t[ok], d_s[ok], w_s[ok], keep.truncation, cfg.weight_cap)
            d_t[ok] = d_new
            w_t[ok] = w_new
            hits = h_t[ok].astype(np.int64) + h_s[ok]
            total = t_t[ok].astype(np.int64) + t_s[ok]
            while np.any(total >= saturation):
                full = total >= saturation
                hits = np.where(full, hits // 2, hits)
                total = np.where(full, total // 2, total)
            h_t[ok] = hits
            t_t[ok] = total

    if drop.id in collection:
        collection.remove(drop.id)
    keep.change_state = ChangeState.PERSISTENT
    keep.activity = Activity.INACTIVE
    keep.frames_tracked = max(keep.frames_tracked, drop.frames_tracked)
    for block in keep.blocks.values():
        block.dirty_mesh = True
    if keep.id in collection:
        collection.refresh(keep, force=True)
    update_iso_surface(keep)
    return keep


def handle_deactivation(
    collection: SubmapCollection,
    submap: Submap,
    config: Optional[ChangeConfig] = None,
    integrator_config: Optional[IntegratorConfig] = None,
) -> Submap:
    """Freeze a newly inactive submap and fuse it with a matching inactive one.

    Returns the surviving submap (the input itself when nothing matched).
    """
    config = config or ChangeConfig()
    submap.activity = Activity.INACTIVE
    submap.change_state = ChangeState.PERSISTENT
    update_iso_surface(submap)
    candidates = sorted(
        i for i in collection.query_sphere(submap.bounding_sphere)
        if i != submap.id and not collection[i].is_active
    )
    for cid in candidates:
        other = collection[cid]
        if other.class_id != submap.class_id or other.panoptic_type is not submap.panoptic_type:
            continue
        if other.change_state is ChangeState.ABSENT:
            continue
        update_iso_surface(other)
        if compare_submaps(submap, other, config).verdict is Verdict.MATCH:
            log.debug("fusing submap %d with inactive submap %d", submap.id, other.id)
            submap = fuse_submaps(collection, other, submap, integrator_config)
    return submap
