"""Synthetic RGB-D scenes from analytic primitives.

Boxes, spheres and planes are raycast exactly, so rendered depth and the
sampled ground-truth clouds carry no discretization error. A scene script
lists runs (object set + trajectory) and is stored as YAML.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .camera import CameraIntrinsics, Pose, look_at, pixel_rays
from .core_map import PanopticType

log = logging.getLogger(__name__)

# Surface points closer than this to another solid are contact faces.
_CONTACT_EPS = 1e-6


@dataclass(frozen=True)
class Box:
    half_extents: Tuple[float, float, float]

    def __post_init__(self):
        he = tuple(float(h) for h in self.half_extents)
        if len(he) != 3 or min(he) <= 0:
            raise ValueError("box half extents must be three positive values")
        object.__setattr__(self, "half_extents", he)


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")


@dataclass(frozen=True)
class Plane:
    """Plane ``{x : normal . x = offset}`` in the object frame."""

    normal: Tuple[float, float, float]
    offset: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("plane normal must be non-zero")
        object.__setattr__(self, "normal", tuple(float(c) for c in n / norm))


Shape = Union[Box, Sphere, Plane]


@dataclass
class SceneObject:
    shape: Shape
    pose: Pose
    instance_id: int
    class_id: int
    panoptic_type: PanopticType = PanopticType.OBJECT

    def __post_init__(self):
        self.panoptic_type = PanopticType(self.panoptic_type)
        if self.panoptic_type is PanopticType.FREE_SPACE:
            raise ValueError("scene objects cannot be free space")
        if not 0 < self.instance_id < 65536:
            raise ValueError("instance ids must fit in 1..65535")

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Ray parameter of the first hit (inf on miss) for world-frame rays."""
        inv = self.pose.inverse()
        o = inv.transform(origins)
        d = dirs @ inv.rotation.T
        return _intersect_local(self.shape, o, d)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Signed distance to the solid (negative inside); planes bound a half-space."""
        p = self.pose.inverse().transform(points)
        s = self.shape
        if isinstance(s, Sphere):
            return np.linalg.norm(p, axis=1) - s.radius
        if isinstance(s, Plane):
            return p @ np.asarray(s.normal) - s.offset
        q = np.abs(p) - np.asarray(s.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        return outside + np.minimum(q.max(axis=1), 0.0)


def _intersect_local(shape: Shape, o: np.ndarray, d: np.ndarray) -> np.ndarray:
    t = np.full(len(o), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        if isinstance(shape, Sphere):
            b = (o * d).sum(axis=1)
            a = (d * d).sum(axis=1)
            c = (o * o).sum(axis=1) - shape.radius ** 2
            disc = b * b - a * c
            hit = disc >= 0
            sq = np.sqrt(np.where(hit, disc, 0.0))
            t0 = (-b - sq) / a
            t1 = (-b + sq) / a
            near = np.where(t0 > 0, t0, t1)
            ok = hit & (near > 0)
            t[ok] = near[ok]
        elif isinstance(shape, Plane):
            n = np.asarray(shape.normal)
            denom = d @ n
            tt = (shape.offset - o @ n) / denom
            ok = (denom != 0) & (tt > 0)
            t[ok] = tt[ok]
        else:
            he = np.asarray(shape.half_extents)
            t_lo = (-he - o) / d
            t_hi = (he - o) / d
            t_near = np.nanmax(np.minimum(t_lo, t_hi), axis=1)
            t_far = np.nanmin(np.maximum(t_lo, t_hi), axis=1)
            near = np.where(t_near > 0, t_near, t_far)
            ok = (t_near <= t_far) & (near > 0)
            t[ok] = near[ok]
    return t


@dataclass
class Trajectory:
    """Explicit list of world <- camera poses."""

    poses: List[Pose]

    def __post_init__(self):
        if not self.poses:
            raise ValueError("trajectory must contain at least one pose")

    def __len__(self) -> int:
        return len(self.poses)


def orbit_trajectory(
    frames: int,
    center=(0.0, 0.0),
    radius: float = 0.3,
    height: float = 1.2,
    pitch_deg: float = -25.0,
    yaw_start_deg: float = 0.0,
    yaw_span_deg: float = 360.0,
    outward: bool = True,
) -> Trajectory:
    """Camera circling a vertical axis, looking away from (or toward) it."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    cx, cy = center
    poses = []
    pitch = np.radians(pitch_deg)
    for k in range(frames):
        yaw = np.radians(yaw_start_deg + yaw_span_deg * k / frames)
        radial = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        eye = np.array([cx, cy, height]) + radius * radial
        view = radial if outward else -radial
        direction = np.cos(pitch) * view + np.array([0.0, 0.0, np.sin(pitch)])
        poses.append(look_at(eye, eye + direction))
    return Trajectory(poses)


@dataclass
class Run:
    objects: List[SceneObject]
    trajectory: Trajectory

    def __post_init__(self):
        ids = [o.instance_id for o in self.objects]
        if len(ids) != len(set(ids)):
            raise ValueError("instance ids must be unique within a scene")


@dataclass
class SceneScript:
    runs: List[Run]
    intrinsics: CameraIntrinsics
    depth_noise: float = 0.0
    noise_scales_with_depth: bool = False
    mask_dropout: float = 0.0
    id_corruption: float = 0.0
    bounds: Tuple[Tuple[float, float, float], Tuple[float, float, float]] = ((-2.5, -2.0, 0.0), (2.5, 2.0, 2.5))
    seed: int = 0
    class_names: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.runs:
            raise ValueError("a scene script needs at least one run")
        if self.depth_noise < 0:
            raise ValueError("depth_noise must be non-negative")
        for rate in (self.mask_dropout, self.id_corruption):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("corruption rates must lie in [0, 1]")

    @property
    def frame_counts(self) -> List[int]:
        return [len(r.trajectory) for r in self.runs]


def render_frame(
    objects: Sequence[SceneObject],
    pose: Pose,
    intrinsics: CameraIntrinsics,
    rng: Optional[np.random.Generator] = None,
    depth_noise: float = 0.0,
    noise_scales_with_depth: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """Depth (z, meters) and instance-id images; 0 marks misses in both."""
    rays_cam = pixel_rays(intrinsics).reshape(-1, 3)
    dirs = rays_cam @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, dirs.shape)
    best = np.full(len(dirs), np.inf)
    ids = np.zeros(len(dirs), np.uint16)
    for obj in objects:
        t = obj.intersect(origins, dirs)
        closer = t < best
        best[closer] = t[closer]
        ids[closer] = obj.instance_id
    # Rays have unit z in the camera frame, so the ray parameter is the depth.
    depth = best
    ok = np.isfinite(depth) & (depth >= intrinsics.min_range) & (depth <= intrinsics.max_range)
    depth = np.where(ok, depth, 0.0)
    ids = np.where(ok, ids, 0).astype(np.uint16)
    if depth_noise > 0:
        if rng is None:
            raise ValueError("depth noise requires a random generator")
        sigma = depth_noise * (depth ** 2 if noise_scales_with_depth else 1.0)
        noisy = depth + rng.normal(size=depth.shape) * sigma
        depth = np.where(ok, np.maximum(noisy, 0.0), 0.0)
    shape = (intrinsics.height, intrinsics.width)
    return depth.reshape(shape), ids.reshape(shape)


def corrupt_segmentation(
    ids: np.ndarray,
    table: Dict[int, Tuple[int, PanopticType]],
    rng: np.random.Generator,
    dropout: float,
    corruption: float,
    object_classes: Sequence[int],
    next_id: int,
) -> Tuple[np.ndarray, Dict[int, Tuple[int, PanopticType]]]:
    """Drop whole segments and relabel others with a wrong object class.

    Relabeled segments get a fresh instance id starting at ``next_id``.
    """
    out = ids.copy()
    new_table: Dict[int, Tuple[int, PanopticType]] = {}
    for inst in sorted(int(i) for i in np.unique(ids) if i != 0):
        cls, ptype = table[inst]
        r_drop, r_corrupt, r_class = rng.random(3)
        mask = ids == inst
        if r_drop < dropout:
            out[mask] = 0
            continue
        wrong = [c for c in object_classes if c != cls]
        if r_corrupt < corruption and wrong:
            out[mask] = next_id
            new_table[next_id] = (wrong[int(r_class * len(wrong))], PanopticType.OBJECT)
            next_id += 1
            continue
        new_table[inst] = (cls, ptype)
    return out, new_table


# -- ground truth -----------------------------------------------------------


def _box_faces(obj: SceneObject):
    he = np.asarray(obj.shape.half_extents)
    faces = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            others = [a for a in range(3) if a != axis]
            area = 4.0 * he[others[0]] * he[others[1]]
            faces.append((axis, sign, others, area))
    return faces


def _plane_patch(obj: SceneObject, bounds):
    """Axis-aligned plane clipped to the scene bounds: (axis, value, others, area)."""
    n = obj.pose.rotation @ np.asarray(obj.shape.normal)
    axis = int(np.argmax(np.abs(n)))
    if not np.isclose(abs(n[axis]), 1.0, atol=1e-9):
        raise ValueError("ground truth sampling supports axis-aligned planes only")
    point = obj.pose.transform(np.asarray(obj.shape.normal) * obj.shape.offset)
    lo, hi = np.asarray(bounds[0], float), np.asarray(bounds[1], float)
    others = [a for a in range(3) if a != axis]
    area = float(np.prod(hi[others] - lo[others]))
    return axis, float(point[axis]), others, area


def _sample_object(obj: SceneObject, n: int, rng: np.random.Generator, bounds) -> np.ndarray:
    s = obj.shape
    if isinstance(s, Sphere):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return obj.pose.transform(v * s.radius)
    if isinstance(s, Plane):
        axis, value, others, _ = _plane_patch(obj, bounds)
        lo, hi = np.asarray(bounds[0], float), np.asarray(bounds[1], float)
        p = np.empty((n, 3))
        p[:, axis] = value
        for a in others:
            p[:, a] = rng.uniform(lo[a], hi[a], n)
        return p
    faces = _box_faces(obj)
    areas = np.array([f[3] for f in faces])
    which = rng.choice(len(faces), size=n, p=areas / areas.sum())
    he = np.asarray(s.half_extents)
    local = rng.uniform(-1.0, 1.0, size=(n, 3)) * he
    for k, (axis, sign, _, _) in enumerate(faces):
        local[which == k, axis] = sign * he[axis]
    return obj.pose.transform(local)


def surface_area(obj: SceneObject, bounds) -> float:
    s = obj.shape
    if isinstance(s, Sphere):
        return 4.0 * np.pi * s.radius ** 2
    if isinstance(s, Plane):
        return _plane_patch(obj, bounds)[3]
    return float(sum(f[3] for f in _box_faces(obj)))


def _visible(points: np.ndarray, owner: int, objects: Sequence[SceneObject], bounds) -> np.ndarray:
    lo, hi = np.asarray(bounds[0], float), np.asarray(bounds[1], float)
    keep = np.all((points >= lo - _CONTACT_EPS) & (points <= hi + _CONTACT_EPS), axis=1)
    for k, other in enumerate(objects):
        if k == owner:
            continue
        # Hidden inside another solid (or behind a plane), or a contact face.
        keep &= other.signed_distance(points) > _CONTACT_EPS
    return keep


def sample_ground_truth(objects: Sequence[SceneObject], n: int, seed: int = 0, bounds=None) -> Tuple[np.ndarray, np.ndarray]:
    """Area-uniform surface samples of all exposed surfaces.

    Surfaces inside other solids, on contact faces, or outside ``bounds`` are
    rejected and resampled. Returns ``(points (n, 3), instance ids (n,))``.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    objects = list(objects)
    if not objects:
        raise ValueError("scene has no objects")
    if bounds is None:
        if any(isinstance(o.shape, Plane) for o in objects):
            raise ValueError("planes need scene bounds for sampling")
        bounds = ((-np.inf,) * 3, (np.inf,) * 3)
    rng = np.random.default_rng(seed)
    areas = np.array([surface_area(o, bounds) for o in objects])
    probs = areas / areas.sum()
    pts_out, ids_out = [], []
    remaining = n
    for _ in range(64):
        counts = rng.multinomial(remaining, probs)
        for k, obj in enumerate(objects):
            if counts[k] == 0:
                continue
            p = _sample_object(obj, int(counts[k]), rng, bounds)
            p = p[_visible(p, k, objects, bounds)]
            pts_out.append(p)
            ids_out.append(np.full(len(p), obj.instance_id, np.int64))
        remaining = n - sum(len(p) for p in pts_out)
        if remaining <= 0:
            break
    else:
        raise RuntimeError("could not sample enough visible surface points")
    return np.concatenate(pts_out)[:n], np.concatenate(ids_out)[:n]


# -- scripts ---------------------------------------------------------------


def _pose_from_dict(desc) -> Pose:
    if desc is None:
        return Pose()
    t = np.asarray(desc.get("position", (0.0, 0.0, 0.0)), dtype=float)
    yaw = np.radians(float(desc.get("yaw_deg", 0.0)))
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Pose(rot, t)


def _object_from_dict(desc) -> SceneObject:
    kind = desc["shape"]
    if kind == "box":
        shape = Box(tuple(desc["half_extents"]))
    elif kind == "sphere":
        shape = Sphere(float(desc["radius"]))
    elif kind == "plane":
        shape = Plane(tuple(desc["normal"]), float(desc.get("offset", 0.0)))
    else:
        raise ValueError(f"unknown shape {kind!r}")
    return SceneObject(
        shape,
        _pose_from_dict(desc.get("pose")),
        int(desc["instance_id"]),
        int(desc["class_id"]),
        desc.get("panoptic_type", "object"),
    )


def _object_to_dict(obj: SceneObject) -> dict:
    s = obj.shape
    if isinstance(s, Box):
        d = {"shape": "box", "half_extents": list(s.half_extents)}
    elif isinstance(s, Sphere):
        d = {"shape": "sphere", "radius": s.radius}
    else:
        d = {"shape": "plane", "normal": list(s.normal), "offset": s.offset}
    yaw = float(np.degrees(np.arctan2(obj.pose.rotation[1, 0], obj.pose.rotation[0, 0])))
    d["pose"] = {"position": [float(c) for c in obj.pose.translation], "yaw_deg": yaw}
    d.update(instance_id=obj.instance_id, class_id=obj.class_id, panoptic_type=obj.panoptic_type.value)
    return d


def _trajectory_from_dict(desc) -> Trajectory:
    if "poses" in desc:
        poses = []
        for row in desc["poses"]:
            m = np.asarray(row, dtype=float).reshape(3, 4)
            poses.append(Pose(m[:, :3], m[:, 3]))
        return Trajectory(poses)
    kind = desc.get("type", "orbit")
    if kind != "orbit":
        raise ValueError(f"unknown trajectory type {kind!r}")
    args = {k: v for k, v in desc.items() if k != "type"}
    if "center" in args:
        args["center"] = tuple(args["center"])
    return orbit_trajectory(**args)


def load_script(path) -> SceneScript:
    """Parse a YAML scene script."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return script_from_dict(raw)


def script_from_dict(raw: dict) -> SceneScript:
    known = {"runs", "intrinsics", "depth_noise", "noise_scales_with_depth", "mask_dropout",
             "id_corruption", "bounds", "seed", "class_names", "objects"}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown scene script keys: {sorted(unknown)}")
    intr = CameraIntrinsics(**raw["intrinsics"])
    shared = [_object_from_dict(o) for o in raw.get("objects", [])]
    runs = []
    for run in raw["runs"]:
        objs = list(shared)
        removed = set(run.get("remove", []))
        objs = [o for o in objs if o.instance_id not in removed]
        for o in run.get("objects", []):
            new = _object_from_dict(o)
            objs = [x for x in objs if x.instance_id != new.instance_id] + [new]
        runs.append(Run(objs, _trajectory_from_dict(run["trajectory"])))
    bounds = raw.get("bounds", ((-2.5, -2.0, 0.0), (2.5, 2.0, 2.5)))
    return SceneScript(
        runs=runs,
        intrinsics=intr,
        depth_noise=float(raw.get("depth_noise", 0.0)),
        noise_scales_with_depth=bool(raw.get("noise_scales_with_depth", False)),
        mask_dropout=float(raw.get("mask_dropout", 0.0)),
        id_corruption=float(raw.get("id_corruption", 0.0)),
        bounds=(tuple(bounds[0]), tuple(bounds[1])),
        seed=int(raw.get("seed", 0)),
        class_names={int(k): str(v) for k, v in raw.get("class_names", {}).items()},
    )


# -- bundled scenes --------------------------------------------------------

WALL, FLOOR, CEILING = 1, 2, 3
CABINET, TABLE, BALL, CHAIR, CRATE, STOOL = 10, 11, 12, 13, 14, 15
CUP, BOTTLE, BOOK = 20, 21, 22
SMALL_CLASSES = (CUP, BOTTLE, BOOK)
CLASS_NAMES = {
    WALL: "wall", FLOOR: "floor", CEILING: "ceiling", CABINET: "cabinet", TABLE: "table",
    BALL: "ball", CHAIR: "chair", CRATE: "crate", STOOL: "stool", CUP: "cup", BOTTLE: "bottle",
    BOOK: "book",
}


def default_intrinsics(width: int = 320, height: int = 240, focal: float = 240.0) -> CameraIntrinsics:
    return CameraIntrinsics(focal, focal, width / 2.0, height / 2.0, width, height, 0.1, 5.0)


def room_objects(bounds=((-2.5, -2.0, 0.0), (2.5, 2.0, 2.5)), first_id: int = 1) -> List[SceneObject]:
    """Four walls, floor and ceiling facing into an axis-aligned room."""
    lo, hi = np.asarray(bounds[0], float), np.asarray(bounds[1], float)
    planes = [
        ((1, 0, 0), lo[0], WALL), ((-1, 0, 0), -hi[0], WALL),
        ((0, 1, 0), lo[1], WALL), ((0, -1, 0), -hi[1], WALL),
        ((0, 0, 1), lo[2], FLOOR), ((0, 0, -1), -hi[2], CEILING),
    ]
    out = []
    for k, (n, off, cls) in enumerate(planes):
        out.append(SceneObject(Plane(n, float(off)), Pose(), first_id + k, cls, PanopticType.BACKGROUND))
    return out


def _box(iid, cls, half, x, y, yaw=0.0) -> SceneObject:
    return SceneObject(Box(half), _pose_from_dict({"position": (x, y, half[2]), "yaw_deg": yaw}), iid, cls)


def _ball(iid, cls, r, x, y, z=None) -> SceneObject:
    return SceneObject(Sphere(r), Pose(np.eye(3), (x, y, r if z is None else z)), iid, cls)


def default_room_objects() -> List[SceneObject]:
    return room_objects() + [
        _box(101, CABINET, (0.3, 0.2, 0.4), 1.6, 0.9, 20.0),
        _box(102, TABLE, (0.4, 0.3, 0.25), -1.5, -1.0, 0.0),
        _ball(103, BALL, 0.25, 0.3, 1.4),
        _box(104, CHAIR, (0.22, 0.22, 0.3), -1.7, 1.1, 35.0),
        _ball(105, BALL, 0.3, 1.5, -1.2),
        _box(106, CRATE, (0.25, 0.15, 0.2), 0.0, -1.5, -15.0),
        _box(107, STOOL, (0.2, 0.2, 0.2), -0.4, 1.5, 10.0),
    ]


def default_script(frames: int = 200, seed: int = 0, **corruption) -> SceneScript:
    """One orbit through the default room."""
    return SceneScript(
        runs=[Run(default_room_objects(), orbit_trajectory(frames))],
        intrinsics=default_intrinsics(),
        seed=seed,
        class_names=dict(CLASS_NAMES),
        **corruption,
    )


def change_script(frames_per_run: int = 120, seed: int = 0, **corruption) -> SceneScript:
    """Two runs: one object moved, one removed, one added."""
    first = default_room_objects()
    moved = _box(106, CRATE, (0.25, 0.15, 0.2), 1.2, -1.5, 30.0)
    added = _box(108, CHAIR, (0.2, 0.25, 0.3), -1.6, 0.0, 0.0)
    second = [o for o in first if o.instance_id not in (103, 106)] + [moved, added]
    return SceneScript(
        runs=[
            Run(first, orbit_trajectory(frames_per_run)),
            Run(second, orbit_trajectory(frames_per_run, yaw_start_deg=90.0)),
        ],
        intrinsics=default_intrinsics(),
        seed=seed,
        class_names=dict(CLASS_NAMES),
        **corruption,
    )


def small_object_script(frames: int = 120, seed: int = 0, **corruption) -> SceneScript:
    """A table top with small items in a compact room."""
    bounds = ((-1.5, -1.5, 0.0), (1.5, 1.5, 2.5))
    table = SceneObject(Box((0.6, 0.4, 0.35)), Pose(np.eye(3), (0.0, 0.0, 0.35)), 101, TABLE)
    top = 0.7
    items = [
        _ball(201, CUP, 0.05, -0.35, -0.15, top + 0.05),
        _ball(202, CUP, 0.06, 0.3, 0.2, top + 0.06),
        SceneObject(Box((0.04, 0.04, 0.1)), Pose(np.eye(3), (0.1, -0.2, top + 0.1)), 203, BOTTLE),
        SceneObject(Box((0.1, 0.07, 0.025)), _pose_from_dict({"position": (-0.25, 0.2, top + 0.025), "yaw_deg": 25.0}), 204, BOOK),
        SceneObject(Box((0.035, 0.035, 0.08)), Pose(np.eye(3), (0.4, -0.15, top + 0.08)), 205, BOTTLE),
    ]
    traj = orbit_trajectory(frames, radius=1.1, height=1.4, pitch_deg=-35.0, outward=False)
    return SceneScript(
        runs=[Run(room_objects(bounds) + [table] + items, traj)],
        intrinsics=default_intrinsics(),
        bounds=bounds,
        seed=seed,
        class_names=dict(CLASS_NAMES),
        **corruption,
    )


def script_to_dict(script: SceneScript) -> dict:
    runs = []
    for run in script.runs:
        poses = [np.hstack([p.rotation, p.translation[:, None]]).ravel().tolist() for p in run.trajectory.poses]
        runs.append({"objects": [_object_to_dict(o) for o in run.objects], "trajectory": {"poses": poses}})
    intr = script.intrinsics
    return {
        "intrinsics": {k: getattr(intr, k) for k in ("fx", "fy", "cx", "cy", "width", "height", "min_range", "max_range")},
        "runs": runs,
        "depth_noise": script.depth_noise,
        "noise_scales_with_depth": script.noise_scales_with_depth,
        "mask_dropout": script.mask_dropout,
        "id_corruption": script.id_corruption,
        "bounds": [list(script.bounds[0]), list(script.bounds[1])],
        "seed": script.seed,
        "class_names": dict(script.class_names),
    }


BUNDLED_SCRIPTS = {
    "default": default_script,
    "change": change_script,
    "small_objects": small_object_script,
}


def generate_dataset(script: SceneScript, output_dir, gt_points: int = 1_000_000) -> None:
    """Render every run of ``script`` into ``output_dir`` in the dataset format."""
    from .cli import dataset as fmt

    os.makedirs(output_dir, exist_ok=True)
    rng = np.random.default_rng(script.seed)
    object_classes = sorted(
        {o.class_id for run in script.runs for o in run.objects if o.panoptic_type is PanopticType.OBJECT}
    )
    intr = script.intrinsics
    index = 0
    for r, run in enumerate(script.runs):
        table = {o.instance_id: (o.class_id, o.panoptic_type) for o in run.objects}
        for pose in run.trajectory.poses:
            depth, ids = render_frame(run.objects, pose, intr, rng, script.depth_noise, script.noise_scales_with_depth)
            frame_table = {i: table[i] for i in np.unique(ids).tolist() if i != 0}
            if script.mask_dropout > 0 or script.id_corruption > 0:
                ids, frame_table = corrupt_segmentation(
                    ids, table, rng, script.mask_dropout, script.id_corruption, object_classes, 60000
                )
            fmt.write_frame(output_dir, index, depth, ids, pose, frame_table)
            index += 1
        pts, pid = sample_ground_truth(run.objects, gt_points, seed=script.seed + 1000 * (r + 1), bounds=script.bounds)
        fmt.write_ground_truth(os.path.join(output_dir, f"gt_run{r}.ply"), pts, pid)
        log.info("run %d: %d frames", r, len(run.trajectory))
    fmt.write_manifest(output_dir, intr, script.frame_counts)
    with open(os.path.join(output_dir, "scene.yaml"), "w", encoding="utf-8") as fh:
        yaml.safe_dump(script_to_dict(script), fh, sort_keys=True)
