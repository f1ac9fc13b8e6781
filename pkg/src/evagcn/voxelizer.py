"""Regular spatio-temporal voxel grid with top-K selection by event count."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class VoxelizationConfig:
    # (h', w', t'): h' divides y, w' divides x
    voxel_size: tuple = (4.0, 4.0, 4.0)
    top_k: int = 2048
    feature_dim: int = 2

    def __post_init__(self):
        self.voxel_size = tuple(float(v) for v in self.voxel_size)
        if len(self.voxel_size) != 3 or min(self.voxel_size) <= 0:
            raise ValueError("voxel_size needs three positive entries")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be >= 2")


@dataclass
class VoxelCell:
    coord: np.ndarray
    count: int
    feature: np.ndarray
    index: tuple = ()


@dataclass
class VoxelSet:
    """Retained voxels as stacked arrays, ordered by decreasing count.

    ``coords`` are cell centres in normalized units and ``index`` the integer
    cell indices ``(ix, iy, it)``.  ``total_count`` is the number of points
    voxelized, retained or not.
    """

    coords: np.ndarray
    index: np.ndarray
    counts: np.ndarray
    features: np.ndarray
    voxel_size: tuple
    total_count: int
    discarded_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    label: int | None = None

    def __len__(self):
        return len(self.counts)

    def __getitem__(self, i):
        return VoxelCell(self.coords[i], int(self.counts[i]), self.features[i],
                         tuple(int(v) for v in self.index[i]))


def voxel_feature(polarity, t=None, t_range=None, C=2):
    """Polarity fractions ``(n+/n, n-/n)``, then a ``C-2`` bin normalized time histogram."""
    polarity = np.asarray(polarity)
    n = len(polarity)
    if n == 0:
        raise ValueError("voxel_feature needs at least one event")
    if C < 2:
        raise ValueError("C must be >= 2")
    pos = np.count_nonzero(polarity > 0)
    out = np.zeros(C)
    out[0] = pos / n
    out[1] = (n - pos) / n
    if C > 2:
        lo, hi = t_range
        b = np.floor((np.asarray(t) - lo) / (hi - lo) * (C - 2)).astype(np.int64)
        out[2:] = np.bincount(np.clip(b, 0, C - 3), minlength=C - 2) / n
    return out


def voxelize(points, config):
    """Bin ``(N, 4)`` normalized points into voxels and keep the ``top_k`` fullest.

    Ties in count are broken by ascending lexicographic cell index.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        raise ValueError("cannot voxelize an empty point set")
    h, w, tv = config.voxel_size
    size_xyz = np.array([w, h, tv])
    cell = np.floor(points[:, :3] / size_xyz).astype(np.int64)
    cells, inv, counts = np.unique(cell, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    # np.unique sorts rows lexicographically, so a stable sort on -count keeps index order on ties
    order = np.argsort(-counts, kind="stable")
    keep, drop = order[:config.top_k], order[config.top_k:]

    C = config.feature_dim
    pos = np.bincount(inv, weights=(points[:, 3] > 0).astype(np.float64), minlength=len(cells))
    feats = np.zeros((len(cells), C))
    feats[:, 0] = pos / counts
    feats[:, 1] = (counts - pos) / counts
    if C > 2:
        lo = cell[:, 2] * tv
        b = np.floor((points[:, 2] - lo) / tv * (C - 2)).astype(np.int64)
        b = np.clip(b, 0, C - 3)
        hist = np.zeros((len(cells), C - 2))
        np.add.at(hist, (inv, b), 1.0)
        feats[:, 2:] = hist / counts[:, None]

    centres = (cells + 0.5) * size_xyz
    return VoxelSet(coords=centres[keep], index=cells[keep], counts=counts[keep],
                    features=feats[keep], voxel_size=config.voxel_size,
                    total_count=len(points), discarded_counts=counts[drop])
