"""Panoptic multi-resolution TSDF submap mapping with long-term change handling."""

from .camera import CameraIntrinsics, Pose
from .core_map import ChangeState, PanopticType, Submap, SubmapCollection
from .queries import QueryResult, lookup, lookup_sdf

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "ChangeState",
    "PanopticType",
    "Pose",
    "QueryResult",
    "Submap",
    "SubmapCollection",
    "lookup",
    "lookup_sdf",
]
