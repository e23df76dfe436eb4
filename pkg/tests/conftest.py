import numpy as np
import pytest

from multitsdf.camera import CameraIntrinsics
from multitsdf.core_map import PanopticType, Submap, SubmapCollection, update_bounding_sphere


def fill_sdf(submap: Submap, sdf_fn, lo, hi, weight=50.0, hits=10, total=10):
    """Allocate every block touching the box [lo, hi] and write an analytic SDF."""
    bs = submap.block_size
    b_lo = np.floor(np.asarray(lo, float) / bs).astype(int)
    b_hi = np.floor(np.asarray(hi, float) / bs).astype(int)
    for x in range(b_lo[0], b_hi[0] + 1):
        for y in range(b_lo[1], b_hi[1] + 1):
            for z in range(b_lo[2], b_hi[2] + 1):
                block = submap.allocate_block((x, y, z))
                centers = submap.to_world_frame(submap.voxel_centers((x, y, z)).reshape(-1, 3))
                d = np.clip(sdf_fn(centers), -submap.truncation, submap.truncation)
                block.distance[...] = d.reshape(block.distance.shape)
                block.weight[...] = weight
                block.belong_hits[...] = hits
                block.belong_total[...] = total
    update_bounding_sphere(submap)
    return submap


def sphere_sdf(center, radius):
    c = np.asarray(center, float)
    return lambda p: np.linalg.norm(p - c, axis=1) - radius


def plane_sdf(z0):
    return lambda p: p[:, 2] - z0


def make_submap(sid, ptype=PanopticType.OBJECT, nu=0.05, class_id=1, instance_id=None, vps=8):
    return Submap(sid, ptype, class_id, sid if instance_id is None else instance_id, nu, vps)


def sphere_submap(sid, center, radius, nu=0.05, ptype=PanopticType.OBJECT, class_id=1, vps=8, **kw):
    s = make_submap(sid, ptype, nu, class_id, vps=vps)
    pad = radius + 3 * nu
    c = np.asarray(center, float)
    return fill_sdf(s, sphere_sdf(c, radius), c - pad, c + pad, **kw)


def add_all(collection: SubmapCollection, *submaps):
    for s in submaps:
        collection.add(s)
    return collection


CRITERIA_KEY = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request, capsys):
    """Record and print one pass/fail line per acceptance criterion."""

    def report(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash.setdefault(CRITERIA_KEY, {})[number] = line
        with capsys.disabled():
            print("\n" + line)

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100, min_range=0.1, max_range=5.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
