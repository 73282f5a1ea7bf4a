"""Skeleton graphs, hop distances and the multi-scale aggregation operators.

Two families of scale-``k`` operators are built here:

* ``polynomial_adjacency``: ``Â**k`` with ``Â = D^-1/2 (A + I) D^-1/2``.  Entry
  ``(i, j)`` grows with the number of length-``k`` walks, so vertices close
  to ``i`` dominate (the biased-weighting effect).
* ``k_adjacency``: a binary matrix with ones exactly on the pairs at hop
  distance ``k`` plus the diagonal.  Every ``k``-hop neighbour gets the same
  weight before normalisation.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from heatgait.errors import DisconnectedGraphError, ZeroDegreeError

COCO_JOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

# Bone layout used by GaitGraph for HRNet COCO output (a tree rooted at the nose).
COCO_EDGES = (
    (15, 13), (13, 11), (16, 14), (14, 12), (11, 5), (12, 6),
    (9, 7), (7, 5), (10, 8), (8, 6), (5, 0), (6, 0),
    (1, 0), (3, 1), (2, 0), (4, 2),
)

COCO_LEFT_RIGHT = ((1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16))


class _Unreachable:
    """Sentinel for vertex pairs with no connecting path."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNREACHABLE"

    def __reduce__(self):
        return (_Unreachable, ())


UNREACHABLE = _Unreachable()


@dataclass(frozen=True)
class SkeletonGraph:
    num_vertices: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.num_vertices < 0:
            raise ValueError("num_vertices must be non-negative")
        seen = set()
        normalized = []
        for i, j in self.edges:
            i, j = int(i), int(j)
            if not (0 <= i < self.num_vertices and 0 <= j < self.num_vertices):
                raise ValueError(f"edge ({i}, {j}) out of range for M={self.num_vertices}")
            if i == j:
                raise ValueError(f"self-loop ({i}, {i}) not allowed")
            key = (min(i, j), max(i, j))
            if key not in seen:
                seen.add(key)
                normalized.append(key)
        object.__setattr__(self, "edges", tuple(normalized))

    @property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_vertices, self.num_vertices), dtype=np.int64)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1
        return a

    def neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.num_vertices)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return [sorted(n) for n in nbrs]

    def relabel(self, perm: Sequence[int]) -> "SkeletonGraph":
        """Graph with vertex ``v`` renamed to ``perm[v]``."""
        return SkeletonGraph(self.num_vertices, tuple((perm[i], perm[j]) for i, j in self.edges))


def coco17() -> SkeletonGraph:
    return SkeletonGraph(17, COCO_EDGES)


def path_graph(n: int) -> SkeletonGraph:
    return SkeletonGraph(n, tuple((i, i + 1) for i in range(n - 1)))


@dataclass(frozen=True)
class HopDistanceMatrix:
    """All-pairs hop counts.

    ``hops`` holds the count for reachable pairs; ``reachable`` masks the rest.
    Index with ``dist[i, j]`` to get an ``int`` or :data:`UNREACHABLE`.
    """

    hops: np.ndarray
    reachable: np.ndarray

    @property
    def size(self) -> int:
        return self.hops.shape[0]

    def __getitem__(self, ij):
        i, j = ij
        if not self.reachable[i, j]:
            return UNREACHABLE
        return int(self.hops[i, j])

    def tolist(self) -> list[list]:
        return [[self[i, j] for j in range(self.size)] for i in range(self.size)]

    @property
    def connected(self) -> bool:
        return bool(self.reachable.all())

    def diameter(self) -> int:
        if self.size == 0:
            return 0
        if not self.connected:
            raise DisconnectedGraphError("diameter undefined for a disconnected graph")
        return int(self.hops.max())


def hop_distances(graph: SkeletonGraph) -> HopDistanceMatrix:
    """Breadth-first search from every vertex."""
    m = graph.num_vertices
    hops = np.zeros((m, m), dtype=np.int64)
    reachable = np.zeros((m, m), dtype=bool)
    nbrs = graph.neighbors()
    for source in range(m):
        reachable[source, source] = True
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if not reachable[source, v]:
                    reachable[source, v] = True
                    hops[source, v] = hops[source, u] + 1
                    queue.append(v)
    return HopDistanceMatrix(hops, reachable)


def k_adjacency(graph: SkeletonGraph, k: int, dist: HopDistanceMatrix | None = None) -> np.ndarray:
    """Binary matrix: 1 where hop distance equals ``k`` or on the diagonal."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if dist is None:
        dist = hop_distances(graph)
    out = (dist.reachable & (dist.hops == k)).astype(np.int64)
    np.fill_diagonal(out, 1)
    return out


def hop_adjacency_set(graph: SkeletonGraph, max_scale: int) -> list[np.ndarray]:
    """``[Ã_(0), ..., Ã_(K)]``."""
    dist = hop_distances(graph)
    return [k_adjacency(graph, k, dist) for k in range(max_scale + 1)]


def sym_normalize(matrix) -> np.ndarray:
    """``D^-1/2 M D^-1/2`` with ``D`` the row sums of ``M``."""
    m = np.asarray(matrix, dtype=np.float64)
    deg = m.sum(axis=1)
    if np.any(deg <= 0):
        bad = np.flatnonzero(deg <= 0).tolist()
        raise ZeroDegreeError(f"rows {bad} have zero degree")
    inv_sqrt = 1.0 / np.sqrt(deg)
    return inv_sqrt[:, None] * m * inv_sqrt[None, :]


def _matrix_power(a: np.ndarray, k: int) -> np.ndarray:
    result = np.eye(a.shape[0])
    base = a.copy()
    while k:
        if k & 1:
            result = result @ base
        k >>= 1
        if k:
            base = base @ base
    return result


def polynomial_adjacency(graph: SkeletonGraph, k: int) -> np.ndarray:
    """``Â**k`` by repeated squaring."""
    if k < 0:
        raise ValueError("k must be non-negative")
    a_hat = sym_normalize(graph.adjacency + np.eye(graph.num_vertices))
    return _matrix_power(a_hat, k)


def aggregation_operators(graph: SkeletonGraph, max_scale: int, mode: str = "hop_extracted") -> np.ndarray:
    """Stack of normalised scale-``k`` operators, shape ``(K+1, M, M)``."""
    if mode == "hop_extracted":
        mats = [sym_normalize(a) for a in hop_adjacency_set(graph, max_scale)]
    elif mode == "polynomial":
        mats = [polynomial_adjacency(graph, k) for k in range(max_scale + 1)]
    else:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    return np.stack(mats)


@dataclass(frozen=True)
class BiasRow:
    center: int
    scale: int
    poly_mean_d1: float
    poly_mean_dk: float
    hop_mean_d1: float
    hop_mean_dk: float

    @property
    def poly_biased(self) -> bool:
        return self.poly_mean_d1 > self.poly_mean_dk


@dataclass(frozen=True)
class BiasReport:
    rows: tuple[BiasRow, ...]

    def to_json(self) -> str:
        return json.dumps([row.__dict__ for row in self.rows], indent=2)

    def to_table(self) -> str:
        header = ("center", "scale", "poly_mean_d1", "poly_mean_dk", "hop_mean_d1", "hop_mean_dk")
        lines = [header] + [
            (str(r.center), str(r.scale), f"{r.poly_mean_d1:.6f}", f"{r.poly_mean_dk:.6f}",
             f"{r.hop_mean_d1:.6f}", f"{r.hop_mean_dk:.6f}")
            for r in self.rows
        ]
        widths = [max(len(line[c]) for line in lines) for c in range(len(header))]
        return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(line, widths)) for line in lines)


def bias_report(graph: SkeletonGraph, max_scale: int, centers: Iterable[int] | None = None) -> BiasReport:
    """Compare how ``Â**k`` and the normalised ``Ã_(k)`` weight near vs far neighbours.

    Rows where the center has no vertex at distance ``k`` are skipped.
    """
    if max_scale < 2:
        raise ValueError("max_scale must be at least 2")
    dist = hop_distances(graph)
    if not dist.connected:
        raise DisconnectedGraphError("bias report needs a connected graph")
    if centers is None:
        centers = range(graph.num_vertices)
    rows = []
    for k in range(2, max_scale + 1):
        poly = polynomial_adjacency(graph, k)
        hop = sym_normalize(k_adjacency(graph, k, dist))
        for c in centers:
            d1 = dist.hops[c] == 1
            dk = dist.hops[c] == k
            if not d1.any() or not dk.any():
                continue
            rows.append(BiasRow(
                center=int(c), scale=k,
                poly_mean_d1=float(poly[c, d1].mean()), poly_mean_dk=float(poly[c, dk].mean()),
                hop_mean_d1=float(hop[c, d1].mean()), hop_mean_dk=float(hop[c, dk].mean()),
            ))
    return BiasReport(tuple(rows))
