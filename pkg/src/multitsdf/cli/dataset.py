"""On-disk dataset format.

Layout of a dataset directory:

``manifest.txt``
    UTF-8 ``key value`` lines: width, height, fx, fy, cx, cy, min_range,
    max_range, frame_count, runs (whitespace-separated frames per run).
``depth_%06d.bin`` / ``seg_%06d.bin``
    little-endian uint16, row-major; depth in millimeters (0 = invalid),
    instance ids (0 = unlabeled).
``pose_%06d.txt``
    12 decimals, row-major 3x4 world <- camera.
``segments_%06d.txt``
    ``instance_id class_id panoptic_type`` per line.
``gt_run%d.ply``
    binary little-endian PLY, float64 x/y/z and int32 instance id.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from ..camera import CameraIntrinsics, Pose
from ..core_map import PanopticType
from ..tracking import Segment, SegmentationFrame


class DatasetError(Exception):
    """Base class of dataset loading failures."""


class MissingFileError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class MalformedFileError(DatasetError):
    pass


class SegmentTableError(DatasetError):
    pass


class EmptyDatasetError(DatasetError):
    pass


MANIFEST = "manifest.txt"
_INT_KEYS = ("width", "height", "frame_count")
_FLOAT_KEYS = ("fx", "fy", "cx", "cy", "min_range", "max_range")


@dataclass
class Manifest:
    intrinsics: CameraIntrinsics
    frame_count: int
    runs: List[int]

    def run_of(self, index: int) -> int:
        edges = np.cumsum(self.runs)
        return int(np.searchsorted(edges, index, side="right"))

    def run_starts(self) -> List[int]:
        return [0] + list(np.cumsum(self.runs)[:-1].tolist())


def _path(root, pattern: str, index: int) -> str:
    return os.path.join(root, pattern % index)


def write_manifest(root, intrinsics: CameraIntrinsics, runs: List[int]) -> None:
    lines = [
        f"width {intrinsics.width}",
        f"height {intrinsics.height}",
        f"fx {intrinsics.fx!r}",
        f"fy {intrinsics.fy!r}",
        f"cx {intrinsics.cx!r}",
        f"cy {intrinsics.cy!r}",
        f"min_range {intrinsics.min_range!r}",
        f"max_range {intrinsics.max_range!r}",
        f"frame_count {sum(runs)}",
        "runs " + " ".join(str(int(r)) for r in runs),
    ]
    with open(os.path.join(root, MANIFEST), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_manifest(root) -> Manifest:
    path = os.path.join(root, MANIFEST)
    if not os.path.isfile(path):
        raise MissingFileError(f"manifest not found: {path}")
    values: Dict[str, List[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, *rest = line.split()
            if not rest:
                raise MalformedFileError(f"{path}:{n}: key {key!r} has no value")
            values[key] = rest
    missing = [k for k in _INT_KEYS + _FLOAT_KEYS if k not in values]
    if missing:
        raise MalformedFileError(f"{path}: missing keys {missing}")
    try:
        ints = {k: int(values[k][0]) for k in _INT_KEYS}
        floats = {k: float(values[k][0]) for k in _FLOAT_KEYS}
        runs = [int(r) for r in values.get("runs", [str(ints["frame_count"])])]
    except ValueError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc
    if sum(runs) != ints["frame_count"] or min(runs, default=0) < 0:
        raise MalformedFileError(f"{path}: runs {runs} do not add up to frame_count {ints['frame_count']}")
    try:
        intr = CameraIntrinsics(width=ints["width"], height=ints["height"], **floats)
    except ValueError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc
    return Manifest(intr, ints["frame_count"], runs)


def write_frame(root, index: int, depth: np.ndarray, ids: np.ndarray, pose: Pose, table) -> None:
    """Write one frame; ``table`` maps instance id -> (class id, panoptic type)."""
    mm = np.clip(np.round(np.asarray(depth) * 1000.0), 0, 65535).astype("<u2")
    mm.tofile(_path(root, "depth_%06d.bin", index))
    np.asarray(ids).astype("<u2").tofile(_path(root, "seg_%06d.bin", index))
    m = np.hstack([pose.rotation, pose.translation[:, None]])
    with open(_path(root, "pose_%06d.txt", index), "w", encoding="utf-8") as fh:
        fh.write(" ".join(repr(float(x)) for x in m.ravel()) + "\n")
    with open(_path(root, "segments_%06d.txt", index), "w", encoding="utf-8") as fh:
        for inst in sorted(table):
            cls, ptype = table[inst]
            fh.write(f"{inst} {cls} {PanopticType(ptype).value}\n")


def _read_image(path: str, shape: Tuple[int, int]) -> np.ndarray:
    if not os.path.isfile(path):
        raise MissingFileError(f"missing file: {path}")
    expected = shape[0] * shape[1] * 2
    size = os.path.getsize(path)
    if size != expected:
        if size % 2 == 0 and size > 0 and size % (shape[1] * 2) == 0:
            raise DimensionMismatchError(
                f"{path}: holds {size // (shape[1] * 2)} rows, manifest says {shape[0]}"
            )
        raise MalformedFileError(f"{path}: {size} bytes, expected {expected}")
    return np.fromfile(path, dtype="<u2").reshape(shape)


def _read_pose(path: str) -> Pose:
    if not os.path.isfile(path):
        raise MissingFileError(f"missing file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    try:
        vals = np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc
    if vals.size != 12:
        raise MalformedFileError(f"{path}: expected 12 values, found {vals.size}")
    m = vals.reshape(3, 4)
    try:
        return Pose(m[:, :3], m[:, 3])
    except ValueError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc


def _read_segments(path: str) -> Dict[int, Segment]:
    if not os.path.isfile(path):
        raise MissingFileError(f"missing file: {path}")
    table: Dict[int, Segment] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise MalformedFileError(f"{path}:{n}: expected 'instance_id class_id panoptic_type'")
            try:
                inst, cls = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise MalformedFileError(f"{path}:{n}: {exc}") from exc
            if parts[2] not in ("object", "background"):
                raise MalformedFileError(f"{path}:{n}: panoptic type must be object or background")
            table[inst] = Segment(cls, PanopticType(parts[2]))
    return table


def load_frame(root, index: int, manifest: Manifest = None) -> SegmentationFrame:
    manifest = manifest or load_manifest(root)
    if not 0 <= index < manifest.frame_count:
        raise MissingFileError(f"frame {index} outside dataset of {manifest.frame_count} frames")
    intr = manifest.intrinsics
    shape = (intr.height, intr.width)
    depth = _read_image(_path(root, "depth_%06d.bin", index), shape).astype(np.float64) / 1000.0
    ids = _read_image(_path(root, "seg_%06d.bin", index), shape)
    pose = _read_pose(_path(root, "pose_%06d.txt", index))
    table = _read_segments(_path(root, "segments_%06d.txt", index))
    unknown = sorted(set(np.unique(ids).tolist()) - {0} - set(table))
    if unknown:
        raise SegmentTableError(f"frame {index}: instance ids {unknown} absent from the segment table")
    return SegmentationFrame(depth, ids, table, pose, intr, frame_number=index)


_GT_DTYPE = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("instance", "<i4")])


def write_ground_truth(path, points: np.ndarray, instance_ids: np.ndarray) -> None:
    rec = np.empty(len(points), _GT_DTYPE)
    rec["x"], rec["y"], rec["z"] = points[:, 0], points[:, 1], points[:, 2]
    rec["instance"] = instance_ids
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(points)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property int instance\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())


def read_ground_truth(path) -> Tuple[np.ndarray, np.ndarray]:
    if not os.path.isfile(path):
        raise MissingFileError(f"missing file: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise MalformedFileError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    count = None
    for line in header:
        if line.startswith("element vertex"):
            count = int(line.split()[2])
    if count is None or "format binary_little_endian 1.0" not in header:
        raise MalformedFileError(f"{path}: unsupported PLY header")
    body = data[end + len(b"end_header\n"):]
    if len(body) != count * _GT_DTYPE.itemsize:
        raise MalformedFileError(f"{path}: expected {count} vertices")
    rec = np.frombuffer(body, _GT_DTYPE)
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1)
    return pts, rec["instance"].astype(np.int64)
