"""Mesh export (ASCII PLY) and map serialization (npz)."""

from __future__ import annotations

import json
import os
from typing import Dict, List, Tuple

import numpy as np

from ..core_map import Activity, ChangeState, Submap, SubmapCollection
from ..meshing import BlockMesh, update_iso_surface


def instance_color(key: int) -> Tuple[int, int, int]:
    """Stable pseudo-random color per id."""
    h = (int(key) * 2654435761) & 0xFFFFFFFF
    return (64 + (h & 0xBF) % 192, 64 + ((h >> 8) & 0xFF) % 192, 64 + ((h >> 16) & 0xFF) % 192)


def write_mesh_ply(path, vertices: np.ndarray, triangles: np.ndarray, colors: np.ndarray = None) -> None:
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if colors is None:
        colors = np.full((len(vertices), 3), 200, np.uint8)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(vertices)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        f"element face {len(triangles)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
        for v, c in zip(vertices, colors):
            fh.write(f"{v[0]:.6f} {v[1]:.6f} {v[2]:.6f} {int(c[0])} {int(c[1])} {int(c[2])}\n")
        for t in triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def read_mesh_ply(path) -> Tuple[np.ndarray, np.ndarray]:
    """Parse an ASCII PLY written by :func:`write_mesh_ply`."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    n_v = n_f = 0
    end = lines.index("end_header")
    for line in lines[:end]:
        if line.startswith("element vertex"):
            n_v = int(line.split()[2])
        elif line.startswith("element face"):
            n_f = int(line.split()[2])
    body = lines[end + 1:]
    verts = np.array([[float(x) for x in l.split()[:3]] for l in body[:n_v]]).reshape(-1, 3)
    tris = np.array([[int(x) for x in l.split()[1:4]] for l in body[n_v:n_v + n_f]], dtype=np.int64).reshape(-1, 3)
    return verts, tris


def _submap_mesh(submap: Submap) -> BlockMesh:
    if submap.is_free_space:
        return BlockMesh.empty()
    if submap.iso_surface is None:
        update_iso_surface(submap)
    return submap.iso_surface.mesh()


def export_meshes(collection: SubmapCollection, path) -> Dict[str, List[str]]:
    """One PLY per submap, a combined PLY of present submaps; absent ones go to ``absent/``."""
    os.makedirs(path, exist_ok=True)
    absent_dir = os.path.join(path, "absent")
    written: Dict[str, List[str]] = {"present": [], "absent": []}
    all_v, all_t, all_c = [], [], []
    offset = 0
    for submap in collection:
        mesh = _submap_mesh(submap)
        color = np.tile(np.array(instance_color(submap.id), np.uint8), (len(mesh.vertices), 1))
        name = f"submap_{submap.id:04d}_{submap.panoptic_type.value}_{submap.class_id}.ply"
        if submap.is_present:
            target = os.path.join(path, name)
            written["present"].append(target)
            if not submap.is_free_space:
                all_v.append(mesh.vertices)
                all_t.append(mesh.triangles + offset)
                all_c.append(color)
                offset += len(mesh.vertices)
        else:
            os.makedirs(absent_dir, exist_ok=True)
            target = os.path.join(absent_dir, name)
            written["absent"].append(target)
        write_mesh_ply(target, mesh.vertices, mesh.triangles, color)
    combined = os.path.join(path, "combined.ply")
    if all_v:
        write_mesh_ply(combined, np.concatenate(all_v), np.concatenate(all_t), np.concatenate(all_c))
    else:
        write_mesh_ply(combined, np.zeros((0, 3)), np.zeros((0, 3), np.int64))
    written["combined"] = [combined]
    return written


_META_FIELDS = ("id", "class_id", "instance_id", "voxel_size", "voxels_per_side", "frames_tracked",
                "frames_since_detection", "created_run")


def submap_summary(submap: Submap) -> dict:
    d = {k: getattr(submap, k) for k in _META_FIELDS}
    d.update(
        panoptic_type=submap.panoptic_type.value,
        activity=submap.activity.value,
        change_state=submap.change_state.value,
        num_blocks=submap.num_blocks,
        bounding_sphere={"center": [round(c, 9) for c in submap.bounding_sphere.center],
                         "radius": round(submap.bounding_sphere.radius, 9)},
    )
    return d


def save_map(collection: SubmapCollection, path) -> None:
    arrays = {}
    meta = {"index_cell_size": collection.spatial_index.cell_size,
            "voxels_per_side": collection.voxels_per_side, "submaps": []}
    for submap in collection:
        m = submap_summary(submap)
        m["pose"] = submap.pose.tolist()
        meta["submaps"].append(m)
        keys, dist, weight, hits, total = submap.block_arrays()
        p = f"s{submap.id}_"
        arrays[p + "blocks"] = np.array(keys, dtype=np.int64).reshape(-1, 3)
        arrays[p + "distance"] = dist
        arrays[p + "weight"] = weight
        arrays[p + "hits"] = hits
        arrays[p + "total"] = total
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), np.uint8)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_map(path, belonging_gate: bool = True) -> SubmapCollection:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        collection = SubmapCollection(meta["index_cell_size"], meta["voxels_per_side"])
        for m in meta["submaps"]:
            submap = Submap(m["id"], m["panoptic_type"], m["class_id"], m["instance_id"], m["voxel_size"],
                            m["voxels_per_side"])
            submap.pose = np.asarray(m["pose"], dtype=float)
            submap.activity = Activity(m["activity"])
            submap.change_state = ChangeState(m["change_state"])
            for k in ("frames_tracked", "frames_since_detection", "created_run"):
                setattr(submap, k, m[k])
            p = f"s{submap.id}_"
            blocks = data[p + "blocks"]
            dist, weight = data[p + "distance"], data[p + "weight"]
            hits, total = data[p + "hits"], data[p + "total"]
            for i, key in enumerate(blocks):
                block = submap.allocate_block(tuple(int(c) for c in key))
                block.distance[...] = dist[i]
                block.weight[...] = weight[i]
                block.belong_hits[...] = hits[i]
                block.belong_total[...] = total[i]
            collection.add(submap)
            update_iso_surface(submap, belonging_gate)
    return collection
