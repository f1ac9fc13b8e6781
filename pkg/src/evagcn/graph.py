"""Fixed-radius neighbour graphs over (x, y, t) coordinates, augmented with an absorbing node.

Event nodes are ``0 .. M-1``; the absorbing node is ``M`` and is adjacent to
every event node.  Absorbing edges are implicit: ``edges`` only lists radius
edges ``(i, j)`` with ``i < j``.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np


@dataclass
class GraphConfig:
    radius: float = 5.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True)
class AbsorbingGraph:
    coords: np.ndarray
    features: np.ndarray
    edges: np.ndarray
    degrees: np.ndarray
    radius: float = float("nan")
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_event_nodes(self):
        return len(self.coords)

    @property
    def num_nodes(self):
        return len(self.coords) + 1

    @property
    def absorbing_index(self):
        return len(self.coords)

    def is_adjacent(self, u, v):
        M = self.absorbing_index
        if u == v or not (0 <= u <= M and 0 <= v <= M):
            return False
        if u == M or v == M:
            return True
        a, b = min(u, v), max(u, v)
        return bool(np.any((self.edges[:, 0] == a) & (self.edges[:, 1] == b)))

    def message_edges(self):
        """Directed message list ``(dst, src, z)`` covering radius and absorbing edges.

        ``z[e]`` is the pseudo-coordinate ``(deg(dst)**-0.5, deg(src)**-0.5)``.
        """
        if "msg" not in self._cache:
            M = self.absorbing_index
            ev = np.arange(M, dtype=np.int64)
            a, b = self.edges[:, 0], self.edges[:, 1]
            dst = np.concatenate([a, b, ev, np.full(M, M, dtype=np.int64)])
            src = np.concatenate([b, a, np.full(M, M, dtype=np.int64), ev])
            inv = 1.0 / np.sqrt(self.degrees.astype(np.float64))
            z = np.column_stack([inv[dst], inv[src]])
            self._cache["msg"] = (dst, src, z)
        return self._cache["msg"]


def distance(a, b):
    """Euclidean distance between two (x, y, t) points."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.sum(d * d)))


def _finish(coords, features, pairs, R):
    coords = np.asarray(coords, dtype=np.float64)
    M = len(coords)
    features = np.asarray(features, dtype=np.float64).reshape(M, -1)
    if len(pairs):
        pairs = np.sort(pairs, axis=1)
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    else:
        pairs = np.zeros((0, 2), dtype=np.int64)
    deg = np.ones(M + 1, dtype=np.int64)
    deg[:M] += np.bincount(pairs.ravel(), minlength=M)
    deg[M] = M
    return AbsorbingGraph(coords, features, pairs.astype(np.int64), deg, float(R))


def _check(coords, R):
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 3 or len(coords) < 1:
        raise ValueError("coords must be an (M, 3) array with M >= 1")
    if not R > 0:
        raise ValueError("radius must be positive")
    return coords


_FORWARD = [o for o in itertools.product((-1, 0, 1), repeat=3) if o > (0, 0, 0)]


def build_radius_graph(coords, features, R):
    """Edges between nodes closer than ``R`` (strict), found with a uniform hash grid of cell size ``R``."""
    coords = _check(coords, R)
    M = len(coords)
    cell = np.floor(coords / R).astype(np.int64)
    cell -= cell.min(axis=0)
    span = cell.max(axis=0) + 3
    # padded linear key so that neighbour offsets never wrap
    stride = np.array([span[1] * span[2], span[2], 1], dtype=np.int64)
    key = (cell + 1) @ stride
    order = np.argsort(key, kind="stable")
    skey = key[order]

    chunks = []
    for off in [(0, 0, 0)] + _FORWARD:
        target = key + np.dot(off, stride)
        start = np.searchsorted(skey, target, "left")
        stop = np.searchsorted(skey, target, "right")
        n = stop - start
        if not n.sum():
            continue
        i = np.repeat(np.arange(M), n)
        pos = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n) + np.repeat(start, n)
        j = order[pos]
        if off == (0, 0, 0):
            keep = j > i
            i, j = i[keep], j[keep]
        diff = coords[i] - coords[j]
        d = np.sqrt(np.sum(diff * diff, axis=1))
        hit = d < R
        chunks.append(np.column_stack([i[hit], j[hit]]))
    pairs = np.concatenate(chunks) if chunks else np.zeros((0, 2), dtype=np.int64)
    return _finish(coords, features, pairs, R)


def build_radius_graph_bruteforce(coords, features, R):
    """All-pairs O(M^2) construction; reference for :func:`build_radius_graph`."""
    coords = _check(coords, R)
    M = len(coords)
    i, j = np.triu_indices(M, k=1)
    diff = coords[i] - coords[j]
    d = np.sqrt(np.sum(diff * diff, axis=1))
    hit = d < R
    return _finish(coords, features, np.column_stack([i[hit], j[hit]]), R)


def pseudo_coordinate(graph, u, v):
    if not graph.is_adjacent(u, v):
        raise ValueError(f"nodes {u} and {v} are not adjacent")
    return np.array([graph.degrees[u] ** -0.5, graph.degrees[v] ** -0.5])


def write_edge_list(graph, path):
    """Debug export: one ``u v`` line per radius edge; absorbing edges omitted."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# M={graph.num_event_nodes} R={graph.radius!r}\n")
        for u, v in graph.edges.tolist():
            fh.write(f"{u} {v}\n")
