"""Exact k-nearest neighbours, k-NN graphs and graph geodesic distances."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from .data import PointCloud
from .errors import EstimationError, UsageError


@dataclass(frozen=True)
class NeighborTable:
    """Sorted neighbour lists: ``indices[i, :]`` ascending in distance, self excluded."""

    k: int
    indices: np.ndarray
    distances: np.ndarray

    @property
    def n(self) -> int:
        return self.indices.shape[0]


@dataclass(frozen=True)
class KnnGraph:
    """Undirected weighted graph stored as unique edges ``rows[e] < cols[e]``."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.rows)

    def degree(self) -> np.ndarray:
        return np.bincount(self.rows, minlength=self.n) + np.bincount(self.cols, minlength=self.n)

    def to_csr(self) -> csr_matrix:
        # built directly from both directions so zero-weight edges stay explicit
        r = np.concatenate([self.rows, self.cols])
        c = np.concatenate([self.cols, self.rows])
        w = np.concatenate([self.weights, self.weights])
        return csr_matrix((w, (r, c)), shape=(self.n, self.n))

    def subgraph(self, nodes) -> "KnnGraph":
        """Induced subgraph on ``nodes`` (sorted), relabelled 0..len(nodes)-1."""
        nodes = np.asarray(nodes)
        remap = np.full(self.n, -1, dtype=np.int64)
        remap[nodes] = np.arange(len(nodes))
        keep = (remap[self.rows] >= 0) & (remap[self.cols] >= 0)
        return KnnGraph(len(nodes), remap[self.rows[keep]], remap[self.cols[keep]], self.weights[keep])


@dataclass(frozen=True)
class GeodesicDistances:
    """Shortest-path lengths from ``sources`` to every node.

    ``values[s, j]`` is NaN exactly where ``reachable[s, j]`` is False.
    """

    sources: np.ndarray
    values: np.ndarray
    reachable: np.ndarray

    @property
    def source_count(self) -> int:
        return len(self.sources)


def pair_distances(points: np.ndarray, i: int, idx) -> np.ndarray:
    """Euclidean distances from point ``i`` to ``points[idx]``.

    Both the tree and the brute-force search report distances through this
    function, so their outputs agree bit for bit.
    """
    diff = points[idx] - points[i]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _order(dist: np.ndarray, idx: np.ndarray, k: int):
    o = np.lexsort((idx, dist))[:k]
    return idx[o], dist[o]


def _knn_brute(points: np.ndarray, k: int):
    n = len(points)
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k))
    everyone = np.arange(n)
    for i in range(n):
        others = np.delete(everyone, i)
        indices[i], distances[i] = _order(pair_distances(points, i, others), others, k)
    return indices, distances


def _knn_tree(points: np.ndarray, k: int):
    n = len(points)
    tree = cKDTree(points)
    extra = min(n - 1, k + 3)
    tree_d, tree_i = tree.query(points, k=extra + 1)
    # drop self from each row; rows where self is not returned (duplicates
    # tied at distance zero) drop their last candidate instead
    is_self = tree_i == np.arange(n)[:, None]
    drop = np.where(is_self.any(axis=1), is_self.argmax(axis=1), extra)
    keep = np.ones_like(is_self)
    keep[np.arange(n), drop] = False
    cand = tree_i[keep].reshape(n, extra)
    diff = points[cand] - points[:, None, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    # order each row by (distance, index)
    o = np.argsort(cand, axis=1, kind="stable")
    cand, dist = np.take_along_axis(cand, o, 1), np.take_along_axis(dist, o, 1)
    o = np.argsort(dist, axis=1, kind="stable")[:, :k]
    indices, distances = np.take_along_axis(cand, o, 1), np.take_along_axis(dist, o, 1)
    if extra < n - 1:
        # a point just outside the queried set could tie with (or, after
        # canonical recomputation, undercut) the k-th distance
        risky = np.flatnonzero(distances[:, -1] >= tree_d[:, -1] * (1 - 1e-9))
        for i in risky:
            ball = np.asarray(tree.query_ball_point(points[i], distances[i, -1] * (1 + 1e-9) + 1e-300))
            ball = ball[ball != i]
            indices[i], distances[i] = _order(pair_distances(points, i, ball), ball, k)
    return indices, distances


def _knn_block(points: np.ndarray, k: int, block: int = 1024):
    # candidates from Gram-matrix distances (fast, slightly inexact), then
    # exact re-ranking; rows whose shortlist might miss a neighbour fall
    # back to a full scan
    n = len(points)
    extra = min(n - 1, k + 3)
    sq = np.einsum("ij,ij->i", points, points)
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k))
    scale = np.max(sq) if n else 0.0
    for a in range(0, n, block):
        rows = np.arange(a, min(a + block, n))
        d2 = sq[rows, None] + sq[None, :] - 2.0 * points[rows] @ points.T
        d2[np.arange(len(rows)), rows] = np.inf
        part = np.argpartition(d2, extra - 1, axis=1)[:, :extra]
        approx_last = np.take_along_axis(d2, part, 1).max(axis=1)
        diff = points[part] - points[rows, None, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        o = np.argsort(part, axis=1, kind="stable")
        part, dist = np.take_along_axis(part, o, 1), np.take_along_axis(dist, o, 1)
        o = np.argsort(dist, axis=1, kind="stable")[:, :k]
        indices[rows] = np.take_along_axis(part, o, 1)
        distances[rows] = np.take_along_axis(dist, o, 1)
        if extra < n - 1:
            # Gram distances carry absolute error ~ eps * |x|^2
            slack = 1e-9 * (scale + 1.0)
            risky = rows[distances[rows, -1] ** 2 >= approx_last - slack]
            everyone = np.arange(n)
            for i in risky:
                others = np.delete(everyone, i)
                indices[i], distances[i] = _order(pair_distances(points, i, others), others, k)
    return indices, distances


def knn(cloud, k: int, method: str = "auto") -> NeighborTable:
    """Exact Euclidean k nearest neighbours of every point.

    Ties are broken by ascending point index, so the result is
    deterministic. ``method`` is ``"tree"`` (k-d tree), ``"block"``
    (blocked Gram-matrix shortlist, faster in high dimension), ``"brute"``
    (O(N^2) scan) or ``"auto"`` (tree up to 16 coordinates, block above).
    All return identical tables.
    """
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    n = len(points)
    if k < 1 or k >= n:
        raise UsageError(f"k must satisfy 1 <= k < N (k={k}, N={n})")
    span = float(np.max(np.abs(points))) if points.size else 0.0
    if not np.isfinite(span * span * max(points.shape[1], 1)):
        # squared distances would overflow, so neighbour order is undefined
        raise EstimationError(f"coordinates too large or not finite (max |x| = {span:.3g})")
    if method == "auto":
        method = "tree" if points.shape[1] <= 16 else "block"
    if method == "tree":
        indices, distances = _knn_tree(points, k)
    elif method == "block":
        indices, distances = _knn_block(points, k)
    elif method == "brute":
        indices, distances = _knn_brute(points, k)
    else:
        raise UsageError(f"unknown knn method {method!r}")
    return NeighborTable(k, indices, distances)


def knn_graph(table: NeighborTable) -> KnnGraph:
    """Symmetrised k-NN graph: i~j if either lists the other."""
    n, k = table.indices.shape
    src = np.repeat(np.arange(n), k)
    dst = table.indices.ravel()
    w = table.distances.ravel()
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    key = lo * n + hi
    key, first = np.unique(key, return_index=True)
    return KnnGraph(n, lo[first], hi[first], w[first])


def _run_sources(csr, sources):
    return dijkstra(csr, directed=False, indices=sources)


def geodesics_all_pairs(graph: KnnGraph, sources=None, n_jobs: int = 1, chunk: int = 256) -> GeodesicDistances:
    """Shortest paths from each source (default: every node).

    One Dijkstra run per source (binary-heap priority queue); runs are split
    into chunks that may execute on ``n_jobs`` threads. Unreachable pairs
    are flagged in ``reachable`` and hold NaN.
    """
    csr = graph.to_csr()
    sources = np.arange(graph.n) if sources is None else np.asarray(sources, dtype=np.int64)
    if graph.n == 0 or len(sources) == 0:
        empty = np.zeros((len(sources), graph.n))
        return GeodesicDistances(sources, empty, np.ones_like(empty, dtype=bool))
    chunks = [sources[a:a + chunk] for a in range(0, len(sources), chunk)]
    if n_jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(lambda s: _run_sources(csr, s), chunks))
    else:
        parts = [_run_sources(csr, s) for s in chunks]
    values = np.vstack(parts)
    reachable = np.isfinite(values)
    values[~reachable] = np.nan
    return GeodesicDistances(sources, values, reachable)


def geodesic_pair_sample(graph: KnnGraph, chunk: int = 256, n_jobs: int = 1):
    """Finite geodesic distances over unordered pairs i < j.

    Streams Dijkstra rows chunk by chunk so the full N x N matrix is never
    held. Returns ``(distances, n_unreachable_pairs)``.
    """
    n = graph.n
    csr = graph.to_csr()
    out = []
    unreachable = 0
    starts = list(range(0, n, chunk))

    def work(a):
        src = np.arange(a, min(a + chunk, n))
        rows = dijkstra(csr, directed=False, indices=src)
        mask = np.arange(n)[None, :] > src[:, None]
        vals = rows[mask]
        fin = np.isfinite(vals)
        return vals[fin], int((~fin).sum())

    if n_jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, starts))
    else:
        results = [work(a) for a in starts]
    for vals, bad in results:
        out.append(vals)
        unreachable += bad
    return (np.concatenate(out) if out else np.zeros(0)), unreachable


def largest_component(graph: KnnGraph) -> np.ndarray:
    """Sorted node indices of the largest connected component.

    Ties go to the component containing the smallest node index.
    """
    if graph.n == 0:
        return np.zeros(0, dtype=np.int64)
    _, labels = connected_components(graph.to_csr(), directed=False)
    sizes = np.bincount(labels)
    first_node = np.full(len(sizes), graph.n)
    np.minimum.at(first_node, labels, np.arange(graph.n))
    tied = np.flatnonzero(sizes == sizes.max())
    best = tied[np.argmin(first_node[tied])]
    return np.flatnonzero(labels == best)
