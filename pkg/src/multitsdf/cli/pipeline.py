"""Mapping pipeline: tracking, integration, meshing and map management per frame."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.spatial import cKDTree

from ..core_map import Activity, ChangeState, PanopticType, SubmapCollection
from ..integrator import integrate_frame, prune_blocks
from ..management import detect_changes, handle_deactivation
from ..meshing import update_iso_surface
from ..tracking import allocate_submap, track_frame, update_activity
from . import dataset as ds
from .config import RunConfig
from .evaluation import evaluate_points, present_surface_points, report_map_size
from .export import export_meshes, save_map, submap_summary

log = logging.getLogger(__name__)

METRICS_VERSION = 1
METRICS_COLUMNS = ["frame", "run", "frame_in_run", "mad", "coverage", "map_bytes", "submap_count",
                   "present_submaps", "vertices"]
TIMING_COLUMNS = ["frame", "tracking_ms", "integration_ms", "meshing_ms", "management_ms"]


@dataclass
class MetricsRecord:
    frame: int
    run: int
    frame_in_run: int
    mad: float
    coverage: float
    map_bytes: int
    submap_count: int
    present_submaps: int
    vertices: int

    def row(self) -> List[str]:
        return [str(self.frame), str(self.run), str(self.frame_in_run), f"{self.mad:.9f}",
                f"{self.coverage:.9f}", str(self.map_bytes), str(self.submap_count),
                str(self.present_submaps), str(self.vertices)]


@dataclass
class MapperResult:
    collection: SubmapCollection
    metrics: List[MetricsRecord] = field(default_factory=list)
    timings: List[Dict[str, float]] = field(default_factory=list)
    state: dict = field(default_factory=dict)


class _GroundTruth:
    """GT cloud of one run with its KD-tree and a fixed coverage subset."""

    def __init__(self, path: str, n_coverage: int, seed: int):
        self.points, self.ids = ds.read_ground_truth(path)
        self.tree = cKDTree(self.points)
        rng = np.random.default_rng(seed)
        n = min(n_coverage, len(self.points))
        self.coverage_points = self.points[np.sort(rng.choice(len(self.points), n, replace=False))]


class Mapper:
    """Stateful driver; feed frames in order with :meth:`process`."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.collection = SubmapCollection(config.mapper.index_cell_size)
        self.free_space_id: Optional[int] = None
        self.run = -1
        self.frames_in_run = 0

    # -- lifecycle -----------------------------------------------------

    def start_run(self, run: int) -> None:
        if self.run >= 0:
            self.end_run(final=False)
        self.run = run
        self.frames_in_run = 0
        # Older inactive maps are no longer confirmed: they must be re-observed.
        for submap in self.collection.inactive():
            if not submap.is_free_space and submap.change_state is ChangeState.PERSISTENT:
                submap.change_state = ChangeState.UNOBSERVED
        if self.config.mapper.free_space:
            fs = allocate_submap(self.collection, self.config.mapper.free_space_class,
                                 PanopticType.FREE_SPACE, self.config.tracking)
            fs.created_run = run
            self.free_space_id = fs.id

    def end_run(self, final: bool) -> None:
        self._detect()
        if final:
            return
        for submap in self.collection.active():
            if submap.is_free_space:
                submap.activity = Activity.INACTIVE
                submap.change_state = ChangeState.PERSISTENT
            elif submap.id in self.collection:
                self._deactivate(submap)
        self.free_space_id = None

    def _deactivate(self, submap) -> None:
        if self.config.mapper.prune:
            prune_blocks(submap, self.collection)
        handle_deactivation(self.collection, submap, self.config.change, self.config.integrator)

    def _detect(self) -> None:
        if self.config.mapper.prune:
            for submap in self.collection.active():
                prune_blocks(submap, self.collection)
        changes = detect_changes(self.collection, self.config.change)
        for sid, state in sorted(changes.items()):
            log.debug("submap %d -> %s", sid, state.value)

    # -- per frame -----------------------------------------------------

    def process(self, frame) -> Dict[str, float]:
        cfg = self.config
        gate = cfg.mapper.belonging_gate
        t0 = time.perf_counter()
        result = track_frame(self.collection, frame, cfg.tracking, self.free_space_id)
        for _, sid in result.new_submaps:
            self.collection[sid].created_run = self.run
        t1 = time.perf_counter()
        integrate_frame(self.collection, frame, result, cfg.integrator)
        t2 = time.perf_counter()
        for submap in self.collection.active():
            if not submap.is_free_space:
                update_iso_surface(submap, gate)
        t3 = time.perf_counter()
        deactivated, _ = update_activity(self.collection, result, cfg.tracking)
        for sid in deactivated:
            if sid in self.collection:
                self._deactivate(self.collection[sid])
        self.frames_in_run += 1
        if self.frames_in_run % cfg.change.detection_period == 0:
            self._detect()
        t4 = time.perf_counter()
        return {"tracking_ms": 1e3 * (t1 - t0), "integration_ms": 1e3 * (t2 - t1),
                "meshing_ms": 1e3 * (t3 - t2), "management_ms": 1e3 * (t4 - t3)}

    def state_report(self) -> dict:
        submaps = [submap_summary(s) for s in self.collection]
        counts: Dict[str, int] = {}
        for s in self.collection:
            key = "active" if s.is_active else s.change_state.value
            counts[key] = counts.get(key, 0) + 1
        return {
            "submaps": submaps,
            "counts": dict(sorted(counts.items())),
            "absent": [s.id for s in self.collection if not s.is_active and s.change_state is ChangeState.ABSENT],
            "map_bytes": report_map_size(self.collection),
        }


def _record(mapper: Mapper, gt: Optional[_GroundTruth], frame: int, threshold: float) -> MetricsRecord:
    coll = mapper.collection
    verts = present_surface_points(coll)
    mad, coverage = float("nan"), 0.0
    if gt is not None and len(verts):
        res = evaluate_points(verts, gt.points, threshold, gt_tree=gt.tree, coverage_points=gt.coverage_points)
        mad, coverage = res.mad, res.coverage
    present = sum(1 for s in coll if s.is_present and not s.is_free_space)
    return MetricsRecord(frame, mapper.run, mapper.frames_in_run, mad, coverage, report_map_size(coll),
                         len(coll), present, len(verts))


def run_mapper(
    config: RunConfig,
    dataset_dir: Optional[str] = None,
    output_dir: Optional[str] = None,
    evaluate: bool = True,
    progress: Optional[Callable[[int, int], None]] = None,
) -> MapperResult:
    """Process a dataset end to end; optionally write outputs to ``output_dir``."""
    dataset_dir = dataset_dir or config.dataset
    output_dir = output_dir if output_dir is not None else config.output
    if not dataset_dir:
        raise ValueError("no dataset given")
    manifest = ds.load_manifest(dataset_dir)
    if manifest.frame_count == 0:
        raise ds.EmptyDatasetError(f"{dataset_dir}: dataset has no frames")
    runs = list(range(len(manifest.runs))) if config.runs is None else [int(r) for r in config.runs]
    if any(not 0 <= r < len(manifest.runs) for r in runs) or runs != sorted(set(runs)):
        raise ValueError(f"invalid run selection {runs} for {len(manifest.runs)} runs")
    runs = [r for r in runs if manifest.runs[r] > 0]
    if not runs:
        raise ds.EmptyDatasetError(f"{dataset_dir}: selected runs contain no frames")

    mapper = Mapper(config)
    ev = config.evaluation
    out = MapperResult(mapper.collection)
    starts = manifest.run_starts()
    total = sum(manifest.runs[r] for r in runs)
    done = 0
    for r in runs:
        gt = None
        gt_path = os.path.join(dataset_dir, f"gt_run{r}.ply")
        if evaluate and os.path.isfile(gt_path):
            gt = _GroundTruth(gt_path, ev.coverage_points, config.seed)
        mapper.start_run(r)
        n = manifest.runs[r]
        for k in range(n):
            index = starts[r] + k
            frame = ds.load_frame(dataset_dir, index, manifest)
            timing = mapper.process(frame)
            timing["frame"] = index
            out.timings.append(timing)
            last = k == n - 1
            if last:
                mapper.end_run(final=r == runs[-1])
            if evaluate and (mapper.frames_in_run % ev.eval_interval == 0 or last):
                out.metrics.append(_record(mapper, gt, index, ev.coverage_threshold))
            done += 1
            if progress is not None:
                progress(done, total)
    out.state = mapper.state_report()
    if output_dir:
        write_outputs(out, output_dir)
    return out


def write_metrics_csv(path, records: List[MetricsRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# multitsdf metrics v{METRICS_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for rec in records:
            w.writerow(rec.row())


def read_metrics_csv(path) -> List[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [l for l in fh if not l.startswith("#")]
    return list(csv.DictReader(lines))


def write_outputs(result: MapperResult, output_dir: str) -> None:
    os.makedirs(output_dir, exist_ok=True)
    write_metrics_csv(os.path.join(output_dir, "metrics.csv"), result.metrics)
    with open(os.path.join(output_dir, "timings.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMING_COLUMNS)
        for t in result.timings:
            w.writerow([t["frame"]] + [f"{t[c]:.3f}" for c in TIMING_COLUMNS[1:]])
    with open(os.path.join(output_dir, "state.json"), "w", encoding="utf-8") as fh:
        json.dump(result.state, fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_map(result.collection, os.path.join(output_dir, "map.npz"))
    export_meshes(result.collection, os.path.join(output_dir, "meshes"))
