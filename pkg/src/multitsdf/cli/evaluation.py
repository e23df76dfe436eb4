"""Reconstruction metrics: MAD, coverage and map size."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from ..core_map import Submap, SubmapCollection

# Bytes per voxel: float32 distance + float32 weight + two uint8 counters.
BYTES_PER_VOXEL = 10
# Fixed per-submap bookkeeping (labels, pose, sphere, counters, states).
SUBMAP_OVERHEAD_BYTES = 256


@dataclass
class EvaluationResult:
    mad: float
    coverage: float
    n_vertices: int
    n_ground_truth: int


def present_surface_points(collection: SubmapCollection, keep: Optional[Callable[[Submap], bool]] = None) -> np.ndarray:
    """Iso-surface vertices of every present, non-free-space submap."""
    parts = []
    for submap in collection:
        if submap.is_free_space or not submap.is_present:
            continue
        if keep is not None and not keep(submap):
            continue
        if submap.iso_surface is not None and len(submap.iso_surface.points):
            parts.append(submap.iso_surface.points.points)
    return np.concatenate(parts) if parts else np.zeros((0, 3))


def evaluate_points(
    vertices: np.ndarray,
    gt_points: np.ndarray,
    threshold: float = 0.05,
    gt_tree: Optional[cKDTree] = None,
    coverage_points: Optional[np.ndarray] = None,
) -> EvaluationResult:
    """MAD of ``vertices`` to the GT cloud and GT coverage within ``threshold``.

    ``coverage_points`` optionally restricts coverage to a GT subset.
    """
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
    gt_points = np.asarray(gt_points, dtype=float).reshape(-1, 3)
    if len(vertices) == 0:
        raise ValueError("reconstruction has no surface vertices")
    if len(gt_points) == 0:
        raise ValueError("ground truth cloud is empty")
    tree = gt_tree if gt_tree is not None else cKDTree(gt_points)
    d_rec, _ = tree.query(vertices)
    cov_pts = gt_points if coverage_points is None else coverage_points
    d_gt, _ = cKDTree(vertices).query(cov_pts, distance_upper_bound=threshold)
    coverage = float(np.count_nonzero(d_gt < threshold)) / len(cov_pts)
    return EvaluationResult(float(d_rec.mean()), coverage, len(vertices), len(gt_points))


def evaluate(collection: SubmapCollection, gt_points: np.ndarray, threshold: float = 0.05, **kwargs) -> EvaluationResult:
    return evaluate_points(present_surface_points(collection), gt_points, threshold, **kwargs)


def report_map_size(collection: SubmapCollection) -> int:
    """Deterministic map footprint in bytes."""
    total = 0
    for submap in collection:
        total += submap.num_blocks * submap.voxels_per_side ** 3 * BYTES_PER_VOXEL
        total += SUBMAP_OVERHEAD_BYTES
    return total
