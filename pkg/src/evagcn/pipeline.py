"""Event cloud -> (center-point graph, voxel graph), with an on-disk cache."""

import hashlib
import logging
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from filelock import FileLock

from .graph import AbsorbingGraph, build_radius_graph
from .sampling import downsample, normalize_time
from .voxelizer import voxelize

log = logging.getLogger(__name__)

CACHE_VERSION = 1

# how many graphs of each kind were actually built (not loaded); read by tests
BUILD_COUNTS = Counter()


@dataclass
class PreparedSample:
    id: str
    label: int
    point_graph: AbsorbingGraph | None
    voxel_graph: AbsorbingGraph | None


def sample_seed(seed, sample_id):
    h = int.from_bytes(hashlib.sha256(str(sample_id).encode()).digest()[:8], "little")
    return [int(seed), h]


def point_graph(points, cfg, width, height, seed):
    """Downsample, then connect center points closer than ``point_graph.radius``.

    Node features are ``(x / width, y / height, t' / t_norm, p)``.
    """
    centers = downsample(points, cfg.sampling, seed)
    feats = np.column_stack([centers[:, 0] / width, centers[:, 1] / height,
                             centers[:, 2] / cfg.sampling.t_norm, centers[:, 3]])
    BUILD_COUNTS["point"] += 1
    return build_radius_graph(centers[:, :3], feats, cfg.point_graph.radius)


def voxel_graph(points, cfg, width, height):
    """Top-K voxels as nodes; features are normalized cell centre followed by the voxel descriptor."""
    vs = voxelize(points, cfg.voxel)
    c = vs.coords
    feats = np.column_stack([c[:, 0] / width, c[:, 1] / height,
                             c[:, 2] / cfg.sampling.t_norm, vs.features])
    coords = vs.index + 0.5 if cfg.voxel_graph.units == "lattice" else c
    BUILD_COUNTS["voxel"] += 1
    return build_radius_graph(coords, feats, cfg.voxel_graph.radius)


def preprocess(cloud, cfg, sample_id="0", branch_mode="dual"):
    if len(cloud) == 0:
        raise ValueError(f"sample {sample_id}: no events")
    points = normalize_time(cloud, cfg.sampling.t_norm)
    pg = vg = None
    if branch_mode != "voxel_only":
        pg = point_graph(points, cfg, cloud.width, cloud.height,
                         sample_seed(cfg.sampling.seed, sample_id))
    if branch_mode != "point_only":
        vg = voxel_graph(points, cfg, cloud.width, cloud.height)
    return PreparedSample(str(sample_id), cloud.label, pg, vg)


def _save_graph(g, path):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, version=CACHE_VERSION, coords=g.coords, features=g.features,
                 edges=g.edges, degrees=g.degrees, radius=g.radius)
    tmp.replace(path)


def _load_graph(path):
    with np.load(path) as z:
        if int(z["version"]) != CACHE_VERSION:
            return None
        return AbsorbingGraph(z["coords"], z["features"], z["edges"], z["degrees"], float(z["radius"]))


def prepare_split(manifest, samples, cfg, cache_dir=None, branch_mode="dual"):
    """Preprocess manifest samples, reusing cached graphs keyed by (sample id, preprocess hash).

    Returns ``(prepared, stats)`` where ``stats`` counts cache hits/misses and time spent.
    """
    t0 = time.perf_counter()
    kinds = [k for k, skip in (("point", "voxel_only"), ("voxel", "point_only")) if branch_mode != skip]
    root = None
    if cache_dir is not None:
        root = Path(cache_dir) / cfg.preprocess_hash()[:16]
        root.mkdir(parents=True, exist_ok=True)
    stats = Counter()
    out = []
    for s in samples:
        graphs = {}
        if root is not None:
            for k in kinds:
                p = root / f"{s.id}.{k}.npz"
                if p.exists():
                    g = _load_graph(p)
                    if g is not None:
                        graphs[k] = g
        if len(graphs) == len(kinds):
            stats["hits"] += 1
        else:
            stats["misses"] += 1
            cloud = manifest.load(s)
            points = normalize_time(cloud, cfg.sampling.t_norm)
            if "point" in kinds and "point" not in graphs:
                graphs["point"] = point_graph(points, cfg, cloud.width, cloud.height,
                                              sample_seed(cfg.sampling.seed, s.id))
            if "voxel" in kinds and "voxel" not in graphs:
                graphs["voxel"] = voxel_graph(points, cfg, cloud.width, cloud.height)
            if root is not None:
                with FileLock(str(root / ".lock")):
                    for k in kinds:
                        _save_graph(graphs[k], root / f"{s.id}.{k}.npz")
        out.append(PreparedSample(s.id, s.label, graphs.get("point"), graphs.get("voxel")))
    stats["seconds"] = time.perf_counter() - t0
    log.info("preprocess: %d samples, %d cached, %d built, %.2fs",
             len(out), stats["hits"], stats["misses"], stats["seconds"])
    return out, stats
