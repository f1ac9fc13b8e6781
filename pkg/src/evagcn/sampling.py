"""Downsampling of dense event streams to representative center points.

Points are ``(N, 4)`` float arrays with columns ``x, y, t, p`` where ``t`` has
already been normalized by :func:`normalize_time`.  Samplers return row
indices into the input so selected points are always real events.
"""

from dataclasses import dataclass

import numpy as np

STRATEGIES = ("octree_grid", "fps", "uniform")

# depth cap keeps packed 3-bit octant paths inside uint64
_MAX_DEPTH = 21


@dataclass
class SamplingConfig:
    strategy: str = "octree_grid"
    max_num_events: int = 40
    target_count: int = 256
    t_norm: float = 64.0
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")
        if self.max_num_events < 1 or self.target_count < 1:
            raise ValueError("max_num_events and target_count must be >= 1")
        if not self.t_norm > 0:
            raise ValueError("t_norm must be positive")


def normalize_time(cloud, t_norm):
    """Map timestamps affinely onto ``[0, t_norm]``; returns an ``(N, 4)`` float array."""
    if len(cloud) == 0:
        raise ValueError("cannot normalize an empty event cloud")
    t = cloud.t.astype(np.float64)
    t0 = t.min()
    span = max(t.max() - t0, 1.0)
    return np.column_stack([cloud.x.astype(np.float64), cloud.y.astype(np.float64),
                            (t - t0) / span * t_norm, cloud.p.astype(np.float64)])


def octree_leaves(xyz, max_num_events):
    """Partition points into octree leaves.

    The tight bounding box is bisected at its midpoints (a coordinate equal
    to the midpoint goes to the upper half) until a cell holds at most
    ``max_num_events`` points or its longest edge is <= 1.  Returns the
    non-empty leaves as index arrays, ordered by octant path with the octant
    code ``4*bx + 2*by + bt``; indices inside a leaf keep input order.
    """
    xyz = np.asarray(xyz, dtype=np.float64)[:, :3]
    n = len(xyz)
    if n == 0:
        raise ValueError("octree needs at least one point")

    cell_lo = xyz.min(axis=0)[None, :]
    cell_hi = xyz.max(axis=0)[None, :]
    cell_key = np.zeros(1, dtype=np.uint64)
    depth = 0
    point_cell = np.zeros(n, dtype=np.int64)
    active = np.arange(n)

    leaf_point, leaf_key, leaf_depth = [], [], []
    while active.size:
        counts = np.bincount(point_cell[active], minlength=len(cell_key))
        edge = (cell_hi - cell_lo).max(axis=1)
        split = (counts > max_num_events) & (edge > 1.0)
        if depth >= _MAX_DEPTH and split.any():
            raise ValueError("octree depth limit reached; coordinates span is too large")

        done = ~split[point_cell[active]]
        if done.any():
            fin = active[done]
            cells, inv = np.unique(point_cell[fin], return_inverse=True)
            leaf_point.append((fin, inv + sum(len(k) for k in leaf_key)))
            leaf_key.append(cell_key[cells])
            leaf_depth.append(np.full(len(cells), depth))

        active = active[~done]
        if not active.size:
            break
        parent = point_cell[active]
        lo, hi = cell_lo[parent], cell_hi[parent]
        mid = (lo + hi) / 2.0
        bits = xyz[active] >= mid
        octant = bits[:, 0] * 4 + bits[:, 1] * 2 + bits[:, 2]
        child_code = parent * 8 + octant
        children, inv = np.unique(child_code, return_inverse=True)
        c_parent, c_oct = children // 8, children % 8
        c_bits = np.column_stack([(c_oct >> 2) & 1, (c_oct >> 1) & 1, c_oct & 1]).astype(bool)
        p_lo, p_hi = cell_lo[c_parent], cell_hi[c_parent]
        p_mid = (p_lo + p_hi) / 2.0
        cell_lo = np.where(c_bits, p_mid, p_lo)
        cell_hi = np.where(c_bits, p_hi, p_mid)
        cell_key = (cell_key[c_parent] << np.uint64(3)) | c_oct.astype(np.uint64)
        point_cell = np.zeros(n, dtype=np.int64)
        point_cell[active] = inv
        depth += 1

    keys = np.concatenate(leaf_key)
    depths = np.concatenate(leaf_depth)
    max_depth = int(depths.max())
    padded = keys << (np.uint64(3) * (max_depth - depths).astype(np.uint64))
    order = np.argsort(padded, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))

    pts = np.concatenate([p for p, _ in leaf_point])
    lid = rank[np.concatenate([l for _, l in leaf_point])]
    # sort by (leaf rank, input index)
    o = np.lexsort((pts, lid))
    pts, lid = pts[o], lid[o]
    bounds = np.flatnonzero(np.diff(lid)) + 1
    return np.split(pts, bounds)


def pick_representatives(leaves, seed):
    """One uniformly random member per leaf, drawn in leaf order."""
    rng = np.random.default_rng(seed)
    u = rng.random(len(leaves))
    return np.array([leaf[int(ui * len(leaf))] for leaf, ui in zip(leaves, u)], dtype=np.int64)


def octree_downsample(points, max_num_events=40, seed=0):
    """Indices of the center points: one random event per non-empty octree leaf."""
    return pick_representatives(octree_leaves(points, max_num_events), seed)


def distance_to(xyz, q):
    return np.sqrt(((xyz - q) ** 2).sum(axis=1))


def fps_downsample(points, target_count, seed=0, first=None):
    """Farthest point sampling in (x, y, t) space; indices in pick order."""
    xyz = np.asarray(points, dtype=np.float64)[:, :3]
    n = len(xyz)
    if target_count > n:
        raise ValueError(f"cannot pick {target_count} of {n} points")
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    if first is None:
        first = int(np.random.default_rng(seed).integers(n))
    picks = np.empty(target_count, dtype=np.int64)
    picks[0] = first
    mind = distance_to(xyz, xyz[first])
    for k in range(1, target_count):
        nxt = int(np.argmax(mind))
        picks[k] = nxt
        mind = np.minimum(mind, distance_to(xyz, xyz[nxt]))
    return picks


def uniform_downsample(points, target_count, seed=0):
    """Uniform random subset without replacement; indices sorted ascending."""
    n = len(points)
    if target_count > n:
        raise ValueError(f"cannot pick {target_count} of {n} points")
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=target_count, replace=False))


def downsample(points, config, seed=None):
    """Dispatch on ``config.strategy``; returns the selected rows of ``points``.

    fps/uniform keep every point when the cloud is smaller than
    ``target_count``.
    """
    seed = config.seed if seed is None else seed
    if config.strategy == "octree_grid":
        idx = octree_downsample(points, config.max_num_events, seed)
    elif config.strategy == "fps":
        idx = fps_downsample(points, min(config.target_count, len(points)), seed)
    else:
        idx = uniform_downsample(points, min(config.target_count, len(points)), seed)
    return points[idx]
