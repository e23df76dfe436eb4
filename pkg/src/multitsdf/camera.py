"""Pinhole camera model and view-frustum culling.

Pixel convention: pixel ``(col, row)`` covers ``u in [col, col + 1)`` and
``v in [row, row + 1)``; its center ray passes through ``(col + 0.5, row + 0.5)``.
Camera frame is x right, y down, z forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .core_map import BoundingSphere


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    min_range: float = 0.1
    max_range: float = 5.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not 0 < self.min_range < self.max_range:
            raise ValueError("require 0 < min_range < max_range")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")


@dataclass(frozen=True)
class Pose:
    """Rigid transform world <- camera."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_matrix(cls, matrix) -> "Pose":
        m = np.asarray(matrix, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def transform(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def __eq__(self, other):
        return (
            isinstance(other, Pose)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera pose at ``eye`` with the optical axis pointing at ``target``."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, [1.0, 0.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.column_stack([x, y, z]), eye)


def project_points(points_camera, intrinsics: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized projection. Returns ``(uv (n, 2), valid (n,))``."""
    p = np.asarray(points_camera, dtype=float).reshape(-1, 3)
    z = p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * p[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * p[:, 1] / z + intrinsics.cy
    valid = (
        (z > 0)
        & (z >= intrinsics.min_range)
        & (z <= intrinsics.max_range)
        & (u >= 0)
        & (u < intrinsics.width)
        & (v >= 0)
        & (v < intrinsics.height)
    )
    return np.stack([u, v], axis=1), valid


def project(point_camera, intrinsics: CameraIntrinsics) -> Optional[Tuple[float, float]]:
    uv, valid = project_points(np.asarray(point_camera, dtype=float).reshape(1, 3), intrinsics)
    if not valid[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def backproject(u, v, depth, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Camera-frame point seen at continuous pixel ``(u, v)`` with depth ``z``.

    Accepts scalars or equally shaped arrays; the result has a trailing axis of 3.
    """
    d = np.asarray(depth, dtype=float)
    if np.any(d <= 0):
        raise ValueError("depth must be positive")
    x = (np.asarray(u, dtype=float) - intrinsics.cx) / intrinsics.fx * d
    y = (np.asarray(v, dtype=float) - intrinsics.cy) / intrinsics.fy * d
    return np.stack(np.broadcast_arrays(x, y, d), axis=-1)


def pixel_rays(intrinsics: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions through every pixel center, z component 1."""
    cols = np.arange(intrinsics.width) + 0.5
    rows = np.arange(intrinsics.height) + 0.5
    uu, vv = np.meshgrid(cols, rows)
    return np.stack(
        [(uu - intrinsics.cx) / intrinsics.fx, (vv - intrinsics.cy) / intrinsics.fy, np.ones_like(uu)],
        axis=-1,
    )


def _frustum_planes(intrinsics: CameraIntrinsics) -> np.ndarray:
    # Inward unit normals of the four side planes through the camera center.
    left = (0.0 - intrinsics.cx) / intrinsics.fx
    right = (intrinsics.width - intrinsics.cx) / intrinsics.fx
    top = (0.0 - intrinsics.cy) / intrinsics.fy
    bottom = (intrinsics.height - intrinsics.cy) / intrinsics.fy
    normals = np.array(
        [
            [1.0, 0.0, -left],
            [-1.0, 0.0, right],
            [0.0, 1.0, -top],
            [0.0, -1.0, bottom],
        ]
    )
    return normals / np.linalg.norm(normals, axis=1, keepdims=True)


def spheres_in_frustum(centers_world, radii, pose: Pose, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Conservative sphere/frustum test for many spheres at once."""
    c = pose.inverse().transform(np.asarray(centers_world, dtype=float).reshape(-1, 3))
    r = np.asarray(radii, dtype=float).reshape(-1)
    ok = (c[:, 2] >= intrinsics.min_range - r) & (c[:, 2] <= intrinsics.max_range + r)
    dist = c @ _frustum_planes(intrinsics).T
    ok &= np.all(dist >= -r[:, None], axis=1)
    return ok


def frustum_intersects(sphere: BoundingSphere, pose: Pose, intrinsics: CameraIntrinsics) -> bool:
    return bool(spheres_in_frustum(np.asarray(sphere.center).reshape(1, 3), [sphere.radius], pose, intrinsics)[0])
