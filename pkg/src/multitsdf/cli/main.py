"""``multitsdf`` command line: generate, run, evaluate, query, export-mesh."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from .. import simulator as sim
from ..queries import lookup
from . import dataset as ds
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .evaluation import evaluate
from .export import export_meshes, load_map
from .pipeline import run_mapper

log = logging.getLogger("multitsdf")

_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--output", help="output directory")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--verbosity", type=int, default=1, help="0 quiet, 1 info, 2 debug")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="multitsdf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="render a synthetic dataset")
    g.add_argument("--scene", default="default",
                   help=f"bundled scene ({', '.join(sorted(sim.BUNDLED_SCRIPTS))}) or a scene YAML file")
    g.add_argument("--frames", type=int, help="frames per run for bundled scenes")
    g.add_argument("--mask-dropout", type=float, help="fraction of segments dropped per frame")
    g.add_argument("--id-corruption", type=float, help="fraction of segments given a wrong id")
    g.add_argument("--gt-points", type=int, default=1_000_000, help="ground-truth points per run")

    sub.add_parser("run", parents=[common], help="map a dataset and write metrics, state and meshes")

    e = sub.add_parser("evaluate", parents=[common], help="MAD and coverage of a saved map")
    e.add_argument("--map", help="map.npz (default: <output>/map.npz)")
    e.add_argument("--run", type=int, help="ground-truth run (default: last)")
    e.add_argument("--threshold", type=float, help="coverage threshold in meters")

    q = sub.add_parser("query", parents=[common], help="occupancy / SDF lookups on a saved map")
    q.add_argument("--map", help="map.npz (default: <output>/map.npz)")
    q.add_argument("--point", nargs=3, type=float, action="append", metavar=("X", "Y", "Z"), default=[])
    q.add_argument("--points", help="text file with one 'x y z' per line")

    x = sub.add_parser("export-mesh", parents=[common], help="write PLY meshes of a saved map")
    x.add_argument("--map", help="map.npz (default: <output>/map.npz)")
    x.add_argument("--mesh-dir", help="destination (default: <output>/meshes)")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    updates = {}
    if args.dataset:
        updates["dataset"] = args.dataset
    if args.output:
        updates["output"] = args.output
    if args.seed is not None:
        updates["seed"] = args.seed
    return dataclasses.replace(cfg, **updates)


def _map_path(args, cfg: RunConfig) -> str:
    if getattr(args, "map", None):
        return args.map
    if not cfg.output:
        raise SystemExit("error: give --map or --output")
    return os.path.join(cfg.output, "map.npz")


def _cmd_generate(args, cfg: RunConfig) -> int:
    if not cfg.output:
        raise SystemExit("error: --output is required")
    if os.path.isfile(args.scene):
        script = sim.load_script(args.scene)
    elif args.scene in sim.BUNDLED_SCRIPTS:
        kwargs = {"seed": cfg.seed}
        if args.frames:
            kwargs["frames_per_run" if args.scene == "change" else "frames"] = args.frames
        script = sim.BUNDLED_SCRIPTS[args.scene](**kwargs)
    else:
        raise SystemExit(f"error: unknown scene {args.scene!r}")
    changes = {}
    if args.mask_dropout is not None:
        changes["mask_dropout"] = args.mask_dropout
    if args.id_corruption is not None:
        changes["id_corruption"] = args.id_corruption
    if args.seed is not None:
        changes["seed"] = args.seed
    script = dataclasses.replace(script, **changes)
    sim.generate_dataset(script, cfg.output, gt_points=args.gt_points)
    print(f"wrote {sum(script.frame_counts)} frames in {len(script.runs)} run(s) to {cfg.output}")
    return 0


def _cmd_run(args, cfg: RunConfig) -> int:
    if not cfg.dataset:
        raise SystemExit("error: --dataset is required")

    def progress(done, total):
        if done % 50 == 0 or done == total:
            log.info("frame %d/%d", done, total)

    result = run_mapper(cfg, progress=progress)
    last = result.metrics[-1] if result.metrics else None
    if last is not None:
        print(f"frames {len(result.timings)}  submaps {last.submap_count}  MAD {last.mad:.4f} m  "
              f"coverage {last.coverage:.3f}  map {last.map_bytes} B")
    print("states " + json.dumps(result.state["counts"]) + f"  absent {result.state['absent']}")
    return 0


def _cmd_evaluate(args, cfg: RunConfig) -> int:
    if not cfg.dataset:
        raise SystemExit("error: --dataset is required")
    manifest = ds.load_manifest(cfg.dataset)
    run = len(manifest.runs) - 1 if args.run is None else args.run
    gt, _ = ds.read_ground_truth(os.path.join(cfg.dataset, f"gt_run{run}.ply"))
    collection = load_map(_map_path(args, cfg), cfg.mapper.belonging_gate)
    threshold = args.threshold if args.threshold is not None else cfg.evaluation.coverage_threshold
    res = evaluate(collection, gt, threshold)
    print(json.dumps({"mad": res.mad, "coverage": res.coverage, "vertices": res.n_vertices,
                      "ground_truth_points": res.n_ground_truth, "threshold": threshold}, indent=2))
    return 0


def _read_points(args) -> np.ndarray:
    pts: List = list(args.point)
    if args.points:
        pts.extend(np.loadtxt(args.points, ndmin=2).tolist())
    if not pts:
        raise SystemExit("error: give --point X Y Z or --points FILE")
    return np.asarray(pts, dtype=float).reshape(-1, 3)


def _cmd_query(args, cfg: RunConfig) -> int:
    collection = load_map(_map_path(args, cfg), cfg.mapper.belonging_gate)
    for p in _read_points(args):
        r = lookup(collection, p)
        sdf = "nan" if r.sdf is None else f"{r.sdf:.4f}"
        src = "-" if r.source_submap is None else str(r.source_submap)
        print(f"{p[0]:.3f} {p[1]:.3f} {p[2]:.3f}  {r.state.value}  sdf {sdf}  submap {src}")
    return 0


def _cmd_export(args, cfg: RunConfig) -> int:
    collection = load_map(_map_path(args, cfg), cfg.mapper.belonging_gate)
    dest = args.mesh_dir or (os.path.join(cfg.output, "meshes") if cfg.output else None)
    if not dest:
        raise SystemExit("error: give --mesh-dir or --output")
    written = export_meshes(collection, dest)
    print(f"{len(written['present'])} present, {len(written['absent'])} absent submap meshes in {dest}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "run": _cmd_run,
    "evaluate": _cmd_evaluate,
    "query": _cmd_query,
    "export-mesh": _cmd_export,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=_LEVELS.get(args.verbosity, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return _COMMANDS[args.command](args, cfg)
    except (ConfigError, ds.DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
