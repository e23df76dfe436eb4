"""Projective TSDF integration into active submaps, belonging counters and pruning."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .camera import pixel_rays, spheres_in_frustum
from .core_map import Submap, SubmapCollection, TsdfVoxel, block_key, block_index_of_key, update_bounding_sphere

log = logging.getLogger(__name__)

# Voxel blocks processed per vectorized batch.
_BATCH = 192


@dataclass
class IntegratorConfig:
    max_weight: float = 100.0
    weight_cap_factor: float = 10.0
    use_weight_dropoff: bool = True
    belonging_period: int = 128
    free_space_clamp_positive: bool = True
    free_space_ray_stride: int = 4

    def __post_init__(self):
        if self.max_weight <= 0 or self.weight_cap_factor <= 0:
            raise ValueError("weights must be positive")
        if self.belonging_period <= 0 or 2 * self.belonging_period - 1 > 255:
            raise ValueError("belonging_period must be in [1, 128]")
        if self.free_space_ray_stride < 1:
            raise ValueError("free_space_ray_stride must be >= 1")

    @property
    def weight_cap(self) -> float:
        return self.max_weight * self.weight_cap_factor

    @property
    def belonging_saturation(self) -> int:
        return 2 * self.belonging_period - 1


@dataclass
class IntegrationStats:
    updated_voxels: int = 0
    allocated_blocks: int = 0
    touched_blocks: int = 0


def compute_weight(z, fx: float, fy: float, voxel_size: float):
    """Measurement weight fx * fy * nu^2 / z^4."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("depth must be positive")
    w = fx * fy * voxel_size ** 2 / z ** 4
    return float(w) if w.ndim == 0 else w


def dropoff_factor(sdf_measure, voxel_size: float, truncation: float):
    """Linear taper of the weight from 1 at -nu to 0 at -delta."""
    s = np.asarray(sdf_measure, dtype=float)
    f = np.clip((truncation + s) / (truncation - voxel_size), 0.0, 1.0)
    return np.where(s < -voxel_size, f, 1.0)


def update_tsdf(distance, weight, sdf_measure, w_in, truncation: float, weight_cap: float):
    """Weighted running average of clamped distances. Works on scalars or arrays."""
    d = np.asarray(distance, dtype=float)
    w = np.asarray(weight, dtype=float)
    w_in = np.asarray(w_in, dtype=float)
    s = np.clip(np.asarray(sdf_measure, dtype=float), -truncation, truncation)
    total = w + w_in
    with np.errstate(invalid="ignore", divide="ignore"):
        new_d = np.where(total > 0, (d * w + s * w_in) / total, d)
    new_w = np.minimum(total, weight_cap)
    return new_d, new_w


def update_tsdf_voxel(
    voxel: TsdfVoxel,
    sdf_measure: float,
    w_in: float,
    truncation: float,
    voxel_size: Optional[float] = None,
    config: Optional[IntegratorConfig] = None,
) -> TsdfVoxel:
    config = config or IntegratorConfig()
    if w_in < 0:
        raise ValueError("w_in must be non-negative")
    if voxel_size is not None and config.use_weight_dropoff:
        w_in = float(w_in * dropoff_factor(sdf_measure, voxel_size, truncation))
    d, w = update_tsdf(voxel.distance, voxel.weight, sdf_measure, w_in, truncation, config.weight_cap)
    return TsdfVoxel(float(d), float(w), voxel.belong_hits, voxel.belong_total)


def update_belonging_counters(hits, total, belongs, saturation: int = 255):
    """Increment counters; halve both once the total reaches ``saturation``."""
    h = np.asarray(hits, dtype=np.int64) + np.asarray(belongs, dtype=np.int64)
    t = np.asarray(total, dtype=np.int64) + 1
    full = t >= saturation
    h = np.where(full, h // 2, h)
    t = np.where(full, t // 2, t)
    return h, t


def update_belonging(voxel: TsdfVoxel, belongs: bool, frame_counter: int = 0, saturation: int = 255) -> TsdfVoxel:
    # frame_counter is implicit in belong_total; accepted for interface symmetry.
    h, t = update_belonging_counters(voxel.belong_hits, voxel.belong_total, bool(belongs), saturation)
    return TsdfVoxel(voxel.distance, voxel.weight, int(h), int(t))


def belonging_probability(voxel_or_hits, total=None):
    """hits / total, 0.5 with no observations. Accepts a voxel or two counters."""
    if total is None:
        hits, total = voxel_or_hits.belong_hits, voxel_or_hits.belong_total
    else:
        hits = voxel_or_hits
    h = np.asarray(hits, dtype=float)
    t = np.asarray(total, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(t > 0, h / np.where(t > 0, t, 1), 0.5)
    return float(p) if p.ndim == 0 else p


def _blocks_near_points(points: np.ndarray, radius: float, block_size: float) -> np.ndarray:
    if len(points) == 0:
        return np.zeros((0, 3), np.int64)
    keys = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                off = np.array([sx, sy, sz]) * radius
                keys.append(np.unique(block_key(np.floor((points + off) / block_size).astype(np.int64))))
    return block_index_of_key(np.unique(np.concatenate(keys)))


def _free_space_blocks(frame, submap: Submap, stride: int) -> np.ndarray:
    intr = frame.intrinsics
    depth = frame.depth[::stride, ::stride]
    rays = pixel_rays(intr)[::stride, ::stride]
    ok = depth > 0
    end = np.minimum(depth - submap.truncation, intr.max_range)
    ok &= end > intr.min_range
    if not ok.any():
        return np.zeros((0, 3), np.int64)
    rays = rays[ok]
    start = np.full(len(rays), intr.min_range)
    end = end[ok]
    step = submap.block_size * 0.5
    n_steps = int(np.ceil((end - start).max() / step)) + 1
    ts = start[:, None] + np.minimum(np.arange(n_steps + 1)[None, :] * step, (end - start)[:, None])
    pts_cam = rays[:, None, :] * ts[:, :, None]
    pts = frame.pose.transform(pts_cam.reshape(-1, 3))
    pts = submap.to_submap_frame(pts)
    return block_index_of_key(np.unique(block_key(np.floor(pts / submap.block_size).astype(np.int64))))


def _integrate_submap(
    submap: Submap,
    frame,
    labels: Optional[np.ndarray],
    config: IntegratorConfig,
    stats: IntegrationStats,
) -> None:
    """Update every in-frustum block of ``submap`` with the frame's depth.

    ``labels`` is a boolean image of pixels belonging to the submap, or ``None``
    when the submap was not tracked this frame (no belonging update).
    """
    intr = frame.intrinsics
    v = submap.voxels_per_side
    nu = submap.voxel_size
    delta = submap.truncation
    keys, dist_pool, weight_pool, hits_pool, total_pool = submap.block_arrays()
    if not keys:
        return
    idx = np.array(keys, dtype=np.int64)
    bs = submap.block_size
    centers = submap.to_world_frame((idx + 0.5) * bs)
    radius = np.full(len(idx), np.sqrt(3.0) * bs / 2)
    in_view = np.nonzero(spheres_in_frustum(centers, radius, frame.pose, intr))[0]
    if in_view.size == 0:
        return

    r = np.arange(v)
    local = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    cam = frame.pose.inverse()
    to_cam = cam.matrix()
    if not np.array_equal(submap.pose, np.eye(4)):
        to_cam = to_cam @ submap.pose
    rot, trans = to_cam[:3, :3], to_cam[:3, 3]
    depth = frame.depth
    H, W = depth.shape
    n_vox = v ** 3
    dflat = dist_pool.reshape(-1, n_vox)
    wflat = weight_pool.reshape(-1, n_vox)
    hflat = hits_pool.reshape(-1, n_vox)
    tflat = total_pool.reshape(-1, n_vox)
    saturation = config.belonging_saturation

    for start in range(0, in_view.size, _BATCH):
        slots = in_view[start:start + _BATCH]
        g = idx[slots][:, None, :] * v + local[None, :, :]
        pts = (g.reshape(-1, 3) + 0.5) * nu
        pc = pts @ rot.T + trans
        z = pc[:, 2]
        ok = (z >= intr.min_range) & (z <= intr.max_range)
        zs = np.where(ok, z, 1.0)
        u = intr.fx * pc[:, 0] / zs + intr.cx
        vv = intr.fy * pc[:, 1] / zs + intr.cy
        ok &= (u >= 0) & (u < W) & (vv >= 0) & (vv < H)
        sel = np.nonzero(ok)[0]
        if sel.size == 0:
            continue
        col = u[sel].astype(np.int64)
        row = vv[sel].astype(np.int64)
        meas = depth[row, col]
        z_sel = z[sel]
        sdf = meas - z_sel
        good = (meas > 0) & (sdf >= -delta)
        if submap.is_free_space and config.free_space_clamp_positive:
            sdf = np.maximum(sdf, 0.0)
        sel, sdf, z_sel, row, col = sel[good], sdf[good], z_sel[good], row[good], col[good]
        if sel.size == 0:
            continue
        w_in = compute_weight(z_sel, intr.fx, intr.fy, nu)
        if config.use_weight_dropoff:
            w_in = w_in * dropoff_factor(sdf, nu, delta)
        keep = w_in > 0
        sel, sdf, w_in, row, col = sel[keep], sdf[keep], w_in[keep], row[keep], col[keep]
        if sel.size == 0:
            continue
        blk = slots[sel // n_vox]
        vox = sel % n_vox
        d_new, w_new = update_tsdf(dflat[blk, vox], wflat[blk, vox], sdf, w_in, delta, config.weight_cap)
        dflat[blk, vox] = d_new
        wflat[blk, vox] = w_new
        if labels is not None:
            h_new, t_new = update_belonging_counters(hflat[blk, vox], tflat[blk, vox], labels[row, col], saturation)
            hflat[blk, vox] = h_new
            tflat[blk, vox] = t_new
        touched = np.unique(blk)
        for s in touched:
            submap.blocks[keys[s]].dirty_mesh = True
        stats.updated_voxels += int(sel.size)
        stats.touched_blocks += int(touched.size)


def integrate_frame(collection: SubmapCollection, frame, tracking_result, config: Optional[IntegratorConfig] = None) -> IntegrationStats:
    """Integrate one segmented depth frame into every active submap."""
    config = config or IntegratorConfig()
    if frame.pose is None or frame.intrinsics is None:
        raise ValueError("frame pose and intrinsics are required")
    intr = frame.intrinsics
    stats = IntegrationStats()
    depth = frame.depth
    valid = (depth > 0) & (depth >= intr.min_range) & (depth <= intr.max_range)
    if not valid.any():
        return stats
    rays = pixel_rays(intr)
    assignment = tracking_result.input_to_submap
    tracked = tracking_result.tracked_submaps()

    for submap in collection.active():
        before = submap.num_blocks
        if submap.is_free_space:
            blocks = _free_space_blocks(frame, submap, config.free_space_ray_stride)
            labels = valid
        else:
            mask = valid & (assignment == submap.id)
            pts = frame.pose.transform(rays[mask] * depth[mask][:, None])
            pts = submap.to_submap_frame(pts)
            blocks = _blocks_near_points(pts, submap.truncation, submap.block_size)
            labels = (assignment == submap.id) if submap.id in tracked else None
        submap.allocate_blocks(blocks)
        stats.allocated_blocks += submap.num_blocks - before
        collection.refresh(submap)
        _integrate_submap(submap, frame, labels, config, stats)
    return stats


def prune_predicate(submap: Submap) -> np.ndarray:
    """Per allocated block (slot order): does any voxel carry belonging surface info?"""
    keys, dist, weight, hits, total = submap.block_arrays()
    if not keys:
        return np.zeros(0, bool)
    info = (
        (np.abs(dist) < submap.truncation)
        & (2 * hits.astype(np.int16) > total.astype(np.int16))
        & (weight > 0)
    )
    return info.reshape(len(keys), -1).any(axis=1)


def prune_blocks(submap: Submap, collection: Optional[SubmapCollection] = None) -> int:
    """Drop blocks without any belonging near-surface voxel. Never prunes free space."""
    if submap.is_free_space:
        return 0
    keys = submap.block_arrays()[0]
    keep = prune_predicate(submap)
    doomed = [k for k, kp in zip(keys, keep) if not kp]
    for k in doomed:
        submap.remove_block(k)
    if doomed:
        if collection is not None and submap.id in collection:
            collection.refresh(submap, force=True)
        else:
            update_bounding_sphere(submap)
    return len(doomed)
