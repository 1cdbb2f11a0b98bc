"""Global intrinsic dimension from the geodesic distance distribution.

Geodesic distances are shortest paths on the symmetrised k-NN graph. Their
histogram is compared, in a window around its mode, with the distance
histogram of a uniform sample of the unit sphere S^d. The window is
``[r_m - r_sigma, r_m + r_sigma / 2]`` where ``r_m`` is the mode and
``r_sigma`` the standard deviation of the distances. The reference distance
axis is rescaled so both modes coincide, and the d with the smallest sum of
squared density differences is selected.

The default reference is measured exactly like the data: a k-NN graph on a
sphere sample of the same size, so graph-distance quantisation affects both
sides alike. Chordal (straight-line) references are available with
``metric="chord"``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from math import ceil
from pathlib import Path

import numpy as np

from .data import PointCloud, make_rng, sample_sphere
from .errors import DegenerateDataError, EstimationError, UsageError
from .local_id import IdEstimate
from .neighbors import GeodesicDistances, geodesic_pair_sample, geodesics_all_pairs, knn, knn_graph, largest_component

MIN_DISTANCES = 100
GRID_POINTS = 64
CI_BAND = 0.05
REFERENCE_SOURCES = 300
REFERENCE_SEED = 0
MAX_DISCONNECTED = 0.5
MODE_TOLERANCE = 0.05


def rice_bins(m: int) -> int:
    return max(1, ceil(2.0 * m ** (1.0 / 3.0)))


def _mode_bin(dens, tolerance):
    # bins within a relative tolerance of the maximum count as tied; ties go
    # to the smaller distance, which keeps flat-topped laws (the circle)
    # from placing their mode by sampling noise
    return int(np.flatnonzero(dens >= (1.0 - tolerance) * dens.max())[0])


@dataclass(frozen=True)
class DistanceHistogram:
    """Normalised histogram of a distance sample.

    ``densities`` integrate to one over ``bin_edges``; ``mode`` is the centre
    of the densest bin (up to the tie tolerance) and ``spread`` the sample
    standard deviation.
    """

    bin_edges: np.ndarray
    densities: np.ndarray
    mode: float
    spread: float
    n_distances: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    def density_at(self, r) -> np.ndarray:
        """Piecewise-linear interpolation between bin centres, zero outside."""
        return np.interp(r, self.centers, self.densities, left=0.0, right=0.0)


def histogram_of(distances, bins: int = None, mode_tolerance: float = MODE_TOLERANCE) -> DistanceHistogram:
    x = np.asarray(distances, dtype=np.float64).ravel()
    m = len(x)
    if m < 2:
        raise EstimationError(f"need at least two distances, got {m}")
    bins = rice_bins(m) if bins is None else bins
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        # every distance in a single bin of unit width
        edges = np.array([lo - 0.5, lo + 0.5])
        return DistanceHistogram(edges, np.ones(1), lo, 0.0, m)
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    dens = counts / (m * np.diff(edges))
    top = _mode_bin(dens, mode_tolerance)
    return DistanceHistogram(edges, dens, 0.5 * (edges[top] + edges[top + 1]), float(x.std(ddof=1)), m)


def _finite_distances(geo: GeodesicDistances):
    """Finite off-diagonal distances, each unordered pair counted once when possible."""
    vals = geo.values
    n_src, n = vals.shape
    if n_src == n and np.array_equal(geo.sources, np.arange(n)):
        keep = np.triu(np.ones((n, n), dtype=bool), 1)
    else:
        keep = np.ones_like(vals, dtype=bool)
        keep[np.arange(n_src), geo.sources] = False
    total = int(keep.sum())
    keep &= geo.reachable
    return vals[keep], total


def distance_distribution(geo, bins: int = None, mode_tolerance: float = MODE_TOLERANCE) -> DistanceHistogram:
    """Histogram of the finite geodesic distances with Rice-rule binning.

    ``geo`` is a :class:`GeodesicDistances` or a flat array of pair distances
    (non-finite entries are treated as unreachable). Bins whose density is
    within ``mode_tolerance`` (relative) of the maximum tie for the mode,
    and the tie goes to the smallest distance; ``mode_tolerance=0`` picks
    the single densest bin.
    """
    if isinstance(geo, GeodesicDistances):
        x, total = _finite_distances(geo)
    else:
        x = np.asarray(geo, dtype=np.float64).ravel()
        total = len(x)
        x = x[np.isfinite(x)]
    if len(x) < MIN_DISTANCES:
        frac = len(x) / total if total else 0.0
        raise EstimationError(
            f"only {len(x)} finite distances (need {MIN_DISTANCES}); "
            f"{frac:.1%} of pairs are connected"
        )
    return histogram_of(x, bins, mode_tolerance)


@dataclass(frozen=True)
class HypersphereReference:
    dim: int
    metric: str
    histogram: DistanceHistogram
    m_samples: int
    seed: int
    build_seconds: float = field(default=0.0, compare=False)

    @property
    def mode(self) -> float:
        return self.histogram.mode

    def density_scaled(self, r, scale: float) -> np.ndarray:
        """Density of ``scale * R`` where ``R`` follows the reference law."""
        return self.histogram.density_at(np.asarray(r) / scale) / scale


def _chord_histogram(points, mode_tolerance, block: int = 512) -> DistanceHistogram:
    # two streaming passes so the m^2/2 distances are never held at once
    m = len(points)

    def blocks():
        for a in range(0, m - 1, block):
            p = points[a:a + block]
            g = np.clip(p @ points[a + 1:].T, -1.0, 1.0)
            d = np.sqrt(np.maximum(2.0 - 2.0 * g, 0.0))
            rows = np.arange(len(p))[:, None] + a
            cols = np.arange(a + 1, m)[None, :]
            yield d[cols > rows]

    lo, hi, s, s2, cnt = np.inf, -np.inf, 0.0, 0.0, 0
    for d in blocks():
        lo, hi = min(lo, d.min()), max(hi, d.max())
        s += d.sum()
        s2 += (d * d).sum()
        cnt += d.size
    bins = rice_bins(cnt)
    counts = np.zeros(bins)
    for d in blocks():
        counts += np.histogram(d, bins=bins, range=(lo, hi))[0]
    edges = np.linspace(lo, hi, bins + 1)
    dens = counts / (cnt * np.diff(edges))
    top = _mode_bin(dens, mode_tolerance)
    mean = s / cnt
    spread = float(np.sqrt(max(s2 - cnt * mean * mean, 0.0) / (cnt - 1)))
    return DistanceHistogram(edges, dens, 0.5 * (edges[top] + edges[top + 1]), spread, cnt)


def _graph_distances(points, k, n_sources, seed):
    n = len(points)
    graph = knn_graph(knn(points, min(k, n - 1)))
    n_sources = n if n_sources is None else min(n_sources, n)
    sources = np.sort(make_rng(seed).choice(n, n_sources, replace=False))
    geo = geodesics_all_pairs(graph, sources=sources)
    return _finite_distances(geo)[0]


_REFERENCE_CACHE: dict = {}


def clear_reference_cache() -> None:
    _REFERENCE_CACHE.clear()


def hypersphere_reference(
    d: int,
    m_samples: int = 10_000,
    seed: int = REFERENCE_SEED,
    metric: str = "chord",
    k: int = 20,
    n_sources: int = REFERENCE_SOURCES,
    cache_dir=None,
    mode_tolerance: float = MODE_TOLERANCE,
) -> HypersphereReference:
    """Distance distribution of ``m_samples`` uniform points on S^d.

    Parameters
    ----------
    d : int
        Sphere dimension (the sample lives in d + 1 coordinates).
    metric : {"chord", "graph"}
        ``"chord"`` bins all pairwise Euclidean distances. ``"graph"`` bins
        k-NN graph geodesics from ``n_sources`` fixed random sources.
    cache_dir : path, optional
        Directory for on-disk copies of graph references. Results are
        always memoised in memory for the life of the process.
    """
    if d < 1 or m_samples < 2:
        raise UsageError("need d >= 1 and m_samples >= 2")
    if metric not in ("chord", "graph"):
        raise UsageError(f"unknown reference metric {metric!r}")
    key = (d, m_samples, seed, metric) + ((k, n_sources) if metric == "graph" else ())
    if (key, mode_tolerance) in _REFERENCE_CACHE:
        return _REFERENCE_CACHE[key, mode_tolerance]
    t0 = time.perf_counter()
    disk = None
    if cache_dir is not None:
        disk = Path(cache_dir) / ("ref_" + "_".join(str(v) for v in key) + ".npy")
    if disk is not None and disk.exists():
        hist = histogram_of(np.load(disk), mode_tolerance=mode_tolerance)
    else:
        points = sample_sphere(m_samples, d, seed)
        if metric == "chord":
            hist = _chord_histogram(points, mode_tolerance)
        else:
            x = _graph_distances(points, k, n_sources, seed)
            if disk is not None:
                disk.parent.mkdir(parents=True, exist_ok=True)
                np.save(disk, x)
            hist = histogram_of(x, mode_tolerance=mode_tolerance)
    ref = HypersphereReference(d, metric, hist, m_samples, seed, time.perf_counter() - t0)
    _REFERENCE_CACHE[key, mode_tolerance] = ref
    return ref


def hypersphere_reference_points(d: int, m_samples: int = 10_000, seed: int = REFERENCE_SEED) -> PointCloud:
    """The sample behind :func:`hypersphere_reference` for the same arguments."""
    return PointCloud(sample_sphere(m_samples, d, seed))


def mismatch_profile(hist: DistanceHistogram, references, grid_points: int = GRID_POINTS):
    """Squared-error mismatch between ``hist`` and each reference in the mode window.

    Both densities are normalised to unit mass over the window before
    comparison, so only their shape there matters.
    """
    rm, rs = hist.mode, hist.spread
    if not rs > 0:
        raise DegenerateDataError("distance spread is zero")
    grid = np.linspace(rm - rs, rm + rs / 2, grid_points)
    p = hist.density_at(grid)
    mass = np.trapezoid(p, grid)
    if not mass > 0:
        raise DegenerateDataError("no distance mass inside the mode window")
    p = p / mass
    errors = np.empty(len(references))
    for i, ref in enumerate(references):
        q = ref.density_scaled(grid, rm / ref.mode)
        qm = np.trapezoid(q, grid)
        # a reference with no mass in the window matches nothing
        errors[i] = np.sum((p - q / qm) ** 2) if qm > 0 else np.sum(p * p) + np.sum(q * q)
    return errors, grid


def estimate_global_id(
    cloud: PointCloud,
    k: int = 20,
    d_min: int = 1,
    d_max: int = 50,
    metric: str = "graph",
    n_sources: int = REFERENCE_SOURCES,
    reference_seed: int = REFERENCE_SEED,
    n_jobs: int = 1,
    cache_dir=None,
    mode_tolerance: float = MODE_TOLERANCE,
) -> IdEstimate:
    """Global intrinsic dimension at the scale of the distance mode.

    The confidence interval is the range of candidate dimensions whose
    mismatch lies within 5% of the minimum.

    Raises
    ------
    EstimationError
        If more than half the points fall outside the largest component of
        the k-NN graph, or too few distances remain.
    DegenerateDataError
        If all geodesic distances coincide.
    """
    if cloud.n < MIN_DISTANCES:
        raise EstimationError(f"global estimate needs at least {MIN_DISTANCES} points, got {cloud.n}")
    if not 1 <= k < cloud.n:
        raise UsageError(f"k must satisfy 1 <= k < N (k={k}, N={cloud.n})")
    if not 1 <= d_min <= d_max:
        raise UsageError("need 1 <= d_min <= d_max")
    graph = knn_graph(knn(cloud, k))
    comp = largest_component(graph)
    discarded = 1.0 - len(comp) / cloud.n
    if discarded > MAX_DISCONNECTED:
        raise EstimationError(f"{discarded:.1%} of points lie outside the largest graph component")
    sub = graph.subgraph(comp) if len(comp) < cloud.n else graph
    distances, _ = geodesic_pair_sample(sub, n_jobs=n_jobs)
    hist = distance_distribution(distances, mode_tolerance=mode_tolerance)
    if hist.spread == 0:
        raise DegenerateDataError("all geodesic distances are equal")

    t0 = time.perf_counter()
    dims = np.arange(d_min, d_max + 1)
    refs = [
        hypersphere_reference(int(d), len(comp), reference_seed, metric, k, n_sources, cache_dir, mode_tolerance)
        for d in dims
    ]
    ref_seconds = time.perf_counter() - t0
    errors, grid = mismatch_profile(hist, refs)
    best = int(np.argmin(errors))
    band = dims[errors <= errors[best] * (1 + CI_BAND)]
    diagnostics = {
        "errors": errors,
        "candidates": dims,
        "mode": hist.mode,
        "spread": hist.spread,
        "grid": grid,
        "discarded_fraction": discarded,
        "n_distances": hist.n_distances,
        "reference_metric": metric,
        "reference_seconds": ref_seconds,
    }
    return IdEstimate(float(dims[best]), float(band.min()), float(band.max()), "global", len(comp), diagnostics)
